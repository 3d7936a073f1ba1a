#include "poseforge/refine.hpp"

#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pf::refine {

void IcpParams::validate() const {
  if (pyramid_levels < 1) throw DataError("icp params: pyramid_levels must be >= 1");
  if (static_cast<int>(correspondence_radius.size()) < pyramid_levels ||
      static_cast<int>(subsample_fractions.size()) < pyramid_levels)
    throw DataError("icp params: per-level arrays shorter than pyramid_levels");
  double prev = std::numeric_limits<double>::infinity();
  for (int l = 0; l < pyramid_levels; ++l) {
    if (correspondence_radius[l] <= 0 || correspondence_radius[l] > prev)
      throw DataError("icp params: radii must be positive and decreasing");
    prev = correspondence_radius[l];
  }
  if (robust_kernel_scale <= 0 || aggregate_weight < 0)
    throw DataError("icp params: invalid kernel scale or aggregate weight");
}

namespace {

inline double huber_weight(double r, double scale) {
  double a = std::abs(r);
  return a <= scale ? 1.0 : scale / a;
}

std::vector<int> seeded_subset(size_t n, double fraction, Rng& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(fraction * n)));
  if (keep >= n) return idx;
  // Fisher-Yates prefix shuffle
  for (size_t i = 0; i < keep; ++i) {
    size_t j = i + static_cast<size_t>(rng.next() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct ModelLevel {
  // per class id -> (tree, original indices); -1 holds the aggregate
  std::map<int, KdTree3> trees;
};

}  // namespace

IcpReport icp_multiclass(const reg::ClassifiedCloud& scene, const reg::ClassifiedCloud& model,
                         const Se3Pose& init, const IcpParams& params,
                         std::vector<IcpIterationTrace>* trace) {
  params.validate();
  scene.validate();
  model.validate();
  if (!init.rotation.allFinite() || !init.translation.allFinite())
    throw DataError("icp_multiclass: init pose not finite");

  IcpReport report;
  report.pose = init;

  Rng rng(params.seed);

  for (int level = 0; level < params.pyramid_levels; ++level) {
    double prev_rms = std::numeric_limits<double>::infinity();
    int rms_grow_streak = 0;
    const double radius = params.correspondence_radius[level];
    const double fraction = params.subsample_fractions[level];

    auto model_subset = seeded_subset(model.size(), fraction, rng);
    auto scene_subset = seeded_subset(scene.size(), fraction, rng);

    // class-partitioned model points plus the aggregate pcd0
    std::map<int, std::vector<Vec3>> class_pts;
    std::map<int, std::vector<int>> class_idx;
    std::vector<Vec3> aggregate_pts;
    for (int i : model_subset) {
      aggregate_pts.push_back(model.points[i]);
      int c = model.class_ids[i];
      if (c >= 0) {
        class_pts[c].push_back(model.points[i]);
        class_idx[c].push_back(i);
      }
    }
    std::map<int, KdTree3> class_trees;
    for (auto& [c, pts] : class_pts) class_trees.emplace(c, KdTree3(pts));
    KdTree3 aggregate_tree(aggregate_pts);

    bool level_converged = false;
    for (int iter = 0; iter < params.max_iters_per_level; ++iter) {
      Se3Pose to_model = report.pose.inverse();

      std::vector<Vec3> src, dst;
      std::vector<double> wts;
      std::map<int, int> inliers;

      for (int i : scene_subset) {
        Vec3 x = to_model.apply(scene.points[i]);
        int c = scene.class_ids[i];
        if (c >= 0) {
          auto it = class_trees.find(c);
          if (it != class_trees.end()) {
            double dist = 0.0;
            int j = it->second.nearest(x, radius, &dist);
            if (j >= 0) {
              src.push_back(x);
              dst.push_back(class_pts[c][j]);
              wts.push_back(huber_weight(dist, params.robust_kernel_scale) * scene.weights[i]);
              inliers[c]++;
            }
          }
        }
        if (params.aggregate_weight > 0) {
          double dist = 0.0;
          int j = aggregate_tree.nearest(x, radius, &dist);
          if (j >= 0) {
            double point_factor = c >= 0 ? scene.weights[i] : params.unclassified_weight;
            src.push_back(x);
            dst.push_back(aggregate_pts[j]);
            wts.push_back(params.aggregate_weight *
                          huber_weight(dist, params.robust_kernel_scale) * point_factor);
            inliers[-1]++;
          }
        }
      }

      double wsum = std::accumulate(wts.begin(), wts.end(), 0.0);
      if (src.size() < 3 || wsum <= 0)
        throw NoCorrespondences("icp_multiclass: no correspondences within radius");

      auto cost_of = [&](const Se3Pose& incr) {
        double c = 0.0;
        for (size_t p = 0; p < src.size(); ++p)
          c += wts[p] * (incr.apply(src[p]) - dst[p]).squaredNorm();
        return c;
      };

      double cost_before = cost_of(Se3Pose::identity());
      Se3Pose incr = reg::kabsch(src, dst, wts);
      double cost_after = cost_of(incr);
      if (trace) trace->push_back({cost_before, cost_after});

      report.pose = se3_compose(report.pose, incr.inverse());
      report.iterations++;
      report.per_class_inliers = inliers;
      report.rms = std::sqrt(cost_after / wsum);

      // correspondence sets change between iterations, so small wobble is
      // normal; only sustained growth counts as divergence
      double rms_now = std::sqrt(cost_before / wsum);
      if (rms_now > prev_rms * 1.02) {
        if (++rms_grow_streak >= 3)
          throw DivergenceDetected("icp_multiclass: RMS grew for 3 consecutive iterations");
      } else {
        rms_grow_streak = 0;
      }
      prev_rms = rms_now;

      double rot_delta = rotation_angle(incr.rotation, Mat3::Identity());
      if (rot_delta < params.convergence_eps_rot &&
          incr.translation.norm() < params.convergence_eps_trans) {
        level_converged = true;
        break;
      }
    }
    report.converged = level_converged;
  }
  return report;
}

Eigen::Matrix<double, 1, 6> point_to_plane_jacobian(const Vec3& src, const Vec3& normal) {
  Eigen::Matrix<double, 1, 6> j;
  j.block<1, 3>(0, 0) = src.cross(normal).transpose();
  j.block<1, 3>(0, 3) = normal.transpose();
  return j;
}

Se3Pose point_to_plane_icp(const PointCloud& scene, const PointCloud& model, const Se3Pose& init,
                           int fixed_iters, const PointToPlaneParams& params) {
  if (!model.has_normals()) throw DataError("point_to_plane_icp: model normals required");
  if (fixed_iters < 1) throw DataError("point_to_plane_icp: fixed_iters must be >= 1");

  KdTree3 tree(model.points);
  Se3Pose pose = init;

  for (int iter = 0; iter < fixed_iters; ++iter) {
    Se3Pose to_model = pose.inverse();
    Eigen::Matrix<double, 6, 6> a = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
    int pairs = 0;

    for (const auto& p : scene.points) {
      Vec3 x = to_model.apply(p);
      double dist = 0.0;
      int j = tree.nearest(x, params.correspondence_radius, &dist);
      if (j < 0) continue;
      const Vec3& m = model.points[j];
      const Vec3& n = model.normals[j];
      double r = (x - m).dot(n);
      double w = huber_weight(r, params.huber_scale);
      auto jac = point_to_plane_jacobian(x, n);
      a += w * jac.transpose() * jac;
      b -= w * r * jac.transpose();
      ++pairs;
    }
    if (pairs < params.min_pairs)
      throw NoCorrespondences("point_to_plane_icp: too few correspondences");

    Eigen::Matrix<double, 6, 1> delta = a.ldlt().solve(b);
    if (!delta.allFinite()) throw DegenerateConfiguration("point_to_plane_icp: singular system");

    Se3Pose incr;
    Vec3 omega = delta.head<3>();
    double angle = omega.norm();
    if (angle > 1e-12)
      incr.rotation = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
    incr.translation = delta.tail<3>();
    pose = se3_compose(pose, incr.inverse());
  }
  return pose;
}

}  // namespace pf::refine

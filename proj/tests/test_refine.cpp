#include "poseforge/refine.hpp"

#include "poseforge/kdtree.hpp"
#include "poseforge/synth.hpp"

#include <doctest.h>

#include <cmath>

using namespace pf;
using namespace pf::refine;

namespace {

reg::ClassifiedCloud model_from_shape(uint64_t seed) {
  synth::ShapeParams sp;
  sp.min_classes = 3;
  synth::TexturedMesh mesh = synth::generate_shape(seed, sp);
  auto built = synth::build_model_cloud(mesh, synth::default_intrinsics());
  return built.cloud;
}

reg::ClassifiedCloud transform_cloud(const reg::ClassifiedCloud& cloud, const Se3Pose& pose) {
  reg::ClassifiedCloud out;
  for (size_t i = 0; i < cloud.size(); ++i) {
    out.points.push_back(pose.apply(cloud.points[i]));
    out.class_ids.push_back(cloud.class_ids[i]);
    out.weights.push_back(cloud.weights[i]);
    if (cloud.has_normals()) out.normals.push_back(pose.rotation * cloud.normals[i]);
  }
  return out;
}

Se3Pose perturbed(const Se3Pose& pose, double angle_rad, double offset_m, Rng& rng) {
  Se3Pose out = pose;
  out.rotation = Eigen::AngleAxisd(angle_rad, rng.unit_vector()).toRotationMatrix() * pose.rotation;
  out.translation += rng.unit_vector() * offset_m;
  return out;
}

// plain weighted point-to-point ICP, written independently as the oracle for
// the aggregate_weight = 0, single-class degeneration
Se3Pose plain_icp(const std::vector<Vec3>& scene, const std::vector<Vec3>& model,
                  const Se3Pose& init, double radius, double huber, int iters) {
  KdTree3 tree(model);
  Se3Pose pose = init;
  for (int it = 0; it < iters; ++it) {
    std::vector<Vec3> src, dst;
    std::vector<double> w;
    Se3Pose inv = pose.inverse();
    for (const auto& p : scene) {
      Vec3 x = inv.apply(p);
      double d;
      int j = tree.nearest(x, radius, &d);
      if (j < 0) continue;
      src.push_back(x);
      dst.push_back(model[j]);
      w.push_back(std::abs(d) <= huber ? 1.0 : huber / std::abs(d));
    }
    if (src.size() < 3) break;
    Se3Pose incr = reg::kabsch(src, dst, w);
    pose = se3_compose(pose, incr.inverse());
    if (rotation_angle(incr.rotation, Mat3::Identity()) < 1e-10 &&
        incr.translation.norm() < 1e-11)
      break;
  }
  return pose;
}

}  // namespace

TEST_CASE("multiclass icp is a fixed point at the ground truth") {
  reg::ClassifiedCloud model = model_from_shape(101);
  Se3Pose gt{Rng(2).random_rotation(), Vec3(0.01, 0.02, 0.4)};
  reg::ClassifiedCloud scene = transform_cloud(model, gt);

  IcpParams params;
  IcpReport report = icp_multiclass(scene, model, gt, params);
  CHECK(report.converged);
  CHECK(rotation_angle(report.pose.rotation, gt.rotation) < 1e-6);
  CHECK((report.pose.translation - gt.translation).norm() < 1e-6);
  CHECK(report.rms < 1e-6);
}

TEST_CASE("multiclass icp converges from a 10 degree / 2 cm offset") {
  for (uint64_t seed : {201, 202}) {
    reg::ClassifiedCloud model = model_from_shape(seed);
    Rng rng(seed);
    Se3Pose gt{rng.random_rotation(), Vec3(0.0, 0.01, 0.42)};
    reg::ClassifiedCloud scene = transform_cloud(model, gt);

    Se3Pose init = perturbed(gt, 10.0 * M_PI / 180.0, 0.02, rng);
    IcpReport report = icp_multiclass(scene, model, init);
    CHECK(rotation_angle(report.pose.rotation, gt.rotation) < 0.5 * M_PI / 180.0);
    CHECK((report.pose.translation - gt.translation).norm() < 1e-3);
  }
}

TEST_CASE("multiclass icp survives a missing class") {
  reg::ClassifiedCloud model = model_from_shape(303);
  Rng rng(7);
  Se3Pose gt{rng.random_rotation(), Vec3(0, 0, 0.45)};

  // drop the most common class from the scene
  std::map<int, int> counts;
  for (int c : model.class_ids)
    if (c >= 0) counts[c]++;
  int drop = std::max_element(counts.begin(), counts.end(), [](auto& a, auto& b) {
               return a.second < b.second;
             })->first;

  reg::ClassifiedCloud scene;
  reg::ClassifiedCloud full = transform_cloud(model, gt);
  for (size_t i = 0; i < full.size(); ++i) {
    if (full.class_ids[i] == drop) continue;
    scene.points.push_back(full.points[i]);
    scene.class_ids.push_back(full.class_ids[i]);
    scene.weights.push_back(full.weights[i]);
    scene.normals.push_back(full.normals[i]);
  }

  Se3Pose init = perturbed(gt, 6.0 * M_PI / 180.0, 0.012, rng);
  IcpReport report = icp_multiclass(scene, model, init);
  CHECK(rotation_angle(report.pose.rotation, gt.rotation) < 0.5 * M_PI / 180.0);
  CHECK((report.pose.translation - gt.translation).norm() < 1.5e-3);
  CHECK(report.per_class_inliers.count(drop) == 0);
}

TEST_CASE("class-restricted matching resolves a symmetric ambiguity") {
  // square plate, identical geometry under a 90 degree turn, texture split
  // left/right into two classes
  reg::ClassifiedCloud model;
  Rng rng(55);
  for (int i = 0; i < 900; ++i) {
    double x = rng.uniform(-0.05, 0.05), y = rng.uniform(-0.05, 0.05);
    model.points.emplace_back(x, y, rng.uniform(-0.0005, 0.0005));
    model.class_ids.push_back(x < 0 ? 0 : 1);
    model.weights.push_back(1.0);
  }
  reg::ClassifiedCloud scene = model;  // ground truth = identity

  Se3Pose wrong;  // near the geometrically symmetric but texture-wrong pose
  wrong.rotation = Eigen::AngleAxisd(88.0 * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix();

  // single coarse level so the escape path is not frozen by shrinking radii
  IcpParams params;
  params.pyramid_levels = 1;
  params.correspondence_radius = {0.03};
  params.subsample_fractions = {1.0};
  params.max_iters_per_level = 120;

  // aggregate-only refinement stays at the wrong symmetric pose
  reg::ClassifiedCloud blind = scene;
  for (size_t i = 0; i < blind.size(); ++i) {
    blind.class_ids[i] = -1;
    blind.weights[i] = 0.0;
  }
  IcpReport agg = icp_multiclass(blind, model, wrong, params);
  CHECK(rotation_angle(agg.pose.rotation, Mat3::Identity()) > 45.0 * M_PI / 180.0);

  // class-restricted matching pulls back to the texture-correct pose
  IcpReport cls = icp_multiclass(scene, model, wrong, params);
  CHECK(rotation_angle(cls.pose.rotation, Mat3::Identity()) < 1.0 * M_PI / 180.0);
}

TEST_CASE("aggregate-only single-class icp matches a plain implementation") {
  Rng rng(606);
  for (int trial = 0; trial < 10; ++trial) {
    // single-class random blob
    reg::ClassifiedCloud model;
    for (int i = 0; i < 300; ++i) {
      model.points.emplace_back(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                rng.uniform(-0.05, 0.05));
      model.class_ids.push_back(0);
      model.weights.push_back(1.0);
    }
    Se3Pose gt{rng.random_rotation(), Vec3(0, 0, 0.4)};
    reg::ClassifiedCloud scene = transform_cloud(model, gt);
    Se3Pose init = perturbed(gt, 0.03, 0.004, rng);

    IcpParams params;
    params.pyramid_levels = 1;
    params.correspondence_radius = {0.02};
    params.subsample_fractions = {1.0};
    params.aggregate_weight = 0.0;
    params.max_iters_per_level = 25;
    params.convergence_eps_rot = 1e-10;
    params.convergence_eps_trans = 1e-11;
    IcpReport ours = icp_multiclass(scene, model, init, params);

    std::vector<Vec3> spts(scene.points.begin(), scene.points.end());
    std::vector<Vec3> mpts(model.points.begin(), model.points.end());
    Se3Pose plain = plain_icp(spts, mpts, init, 0.02, params.robust_kernel_scale, 25);

    CHECK(rotation_angle(ours.pose.rotation, plain.rotation) < 1e-6);
    CHECK((ours.pose.translation - plain.translation).norm() < 1e-6);
  }
}

TEST_CASE("each iteration makes one update and never raises the fixed-pair cost") {
  reg::ClassifiedCloud model = model_from_shape(404);
  Rng rng(9);
  Se3Pose gt{rng.random_rotation(), Vec3(0, 0, 0.4)};
  reg::ClassifiedCloud scene = transform_cloud(model, gt);
  Se3Pose init = perturbed(gt, 0.12, 0.015, rng);

  std::vector<IcpIterationTrace> trace;
  IcpReport report = icp_multiclass(scene, model, init, {}, &trace);
  CHECK(static_cast<int>(trace.size()) == report.iterations);
  for (const auto& t : trace) CHECK(t.cost_after <= t.cost_before + 1e-12);
}

TEST_CASE("point-to-plane icp fixed point and plane offset removal") {
  // plane grid with normals
  PointCloud model;
  for (int i = -10; i <= 10; ++i)
    for (int j = -10; j <= 10; ++j) {
      model.points.emplace_back(i * 0.005, j * 0.005, 0.0);
      model.normals.emplace_back(0, 0, 1);
    }

  PointCloud scene = model;
  Se3Pose id;
  Se3Pose out = point_to_plane_icp(scene, model, id, 5);
  CHECK(rotation_angle(out.rotation, Mat3::Identity()) < 1e-6);
  CHECK(out.translation.norm() < 1e-6);

  // init offset along the plane normal disappears in one iteration
  Se3Pose init;
  init.translation = Vec3(0, 0, 0.005);
  Se3Pose fixed1 = point_to_plane_icp(scene, model, init, 1);
  CHECK(std::abs(fixed1.translation.z()) < 1e-6);
}

TEST_CASE("point-to-plane icp polishes a small offset on a synthetic model") {
  reg::ClassifiedCloud model_cloud = model_from_shape(505);
  PointCloud model;
  model.points = model_cloud.points;
  model.normals = model_cloud.normals;

  Rng rng(10);
  Se3Pose gt{rng.random_rotation(), Vec3(0, 0, 0.4)};
  PointCloud scene;
  for (const auto& p : model.points) scene.points.push_back(gt.apply(p));

  Se3Pose init = perturbed(gt, 3.0 * M_PI / 180.0, 0.005, rng);
  double err0 = rotation_angle(init.rotation, gt.rotation) +
                (init.translation - gt.translation).norm();
  Se3Pose out = point_to_plane_icp(scene, model, init, 5);
  double err1 = rotation_angle(out.rotation, gt.rotation) +
                (out.translation - gt.translation).norm();
  CHECK(err1 * 5.0 <= err0);
}

TEST_CASE("point-to-plane jacobian matches finite differences") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 x(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    Vec3 m(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    Vec3 n = rng.unit_vector();

    auto residual = [&](const Eigen::Matrix<double, 6, 1>& delta) {
      Mat3 r = Mat3::Identity();
      Vec3 omega = delta.head<3>();
      if (omega.norm() > 1e-14)
        r = Eigen::AngleAxisd(omega.norm(), omega.normalized()).toRotationMatrix();
      return ((r * x + delta.tail<3>()) - m).dot(n);
    };

    auto jac = point_to_plane_jacobian(x, n);
    const double h = 1e-7;
    for (int d = 0; d < 6; ++d) {
      Eigen::Matrix<double, 6, 1> dp = Eigen::Matrix<double, 6, 1>::Zero();
      dp(d) = h;
      Eigen::Matrix<double, 6, 1> dm = -dp;
      double fd = (residual(dp) - residual(dm)) / (2 * h);
      double rel = std::abs(fd - jac(0, d)) / std::max(1e-9, std::abs(jac(0, d)));
      if (std::abs(jac(0, d)) > 1e-9)
        CHECK(rel < 1e-4);
      else
        CHECK(std::abs(fd) < 1e-6);
    }
  }
}

TEST_CASE("icp error paths") {
  reg::ClassifiedCloud model;
  model.points = {Vec3(0, 0, 0), Vec3(0.01, 0, 0), Vec3(0, 0.01, 0)};
  model.class_ids = {0, 1, 2};
  model.weights = {1, 1, 1};
  reg::ClassifiedCloud scene = model;

  Se3Pose far;
  far.translation = Vec3(10, 0, 0);  // beyond any radius
  CHECK_THROWS_AS(icp_multiclass(scene, model, far, {}), NoCorrespondences);

  PointCloud no_normals;
  no_normals.points = {Vec3(0, 0, 0)};
  CHECK_THROWS_AS(point_to_plane_icp(no_normals, no_normals, Se3Pose{}, 3), DataError);
}

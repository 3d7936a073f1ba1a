#include "poseforge/registration.hpp"

#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace pf::reg {

void ClassifiedCloud::validate() const {
  if (class_ids.size() != points.size() || weights.size() != points.size())
    throw DataError("classified cloud: array lengths differ");
  if (!normals.empty() && normals.size() != points.size())
    throw DataError("classified cloud: normal count differs");
  for (size_t i = 0; i < points.size(); ++i)
    if (class_ids[i] < 0 && weights[i] != 0.0)
      throw DataError("classified cloud: unclassified point with nonzero weight");
}

Vec3 ClassifiedCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  if (points.empty()) return c;
  for (const auto& p : points) c += p;
  return c / static_cast<double>(points.size());
}

namespace {

// Normal from central depth differences, oriented toward the camera.
Vec3 depth_normal(const DepthImage& depth, const CameraIntrinsics& k, int x, int y) {
  auto lift_px = [&](int xx, int yy) -> std::optional<Vec3> {
    if (!depth.in_bounds(xx, yy)) return std::nullopt;
    uint16_t d = depth.at(xx, yy);
    if (d == 0) return std::nullopt;
    return lift(xx, yy, d * 1e-3, k);
  };
  auto l = lift_px(x - 1, y), r = lift_px(x + 1, y);
  auto u = lift_px(x, y - 1), d2 = lift_px(x, y + 1);
  Vec3 p = lift(x, y, depth.at(x, y) * 1e-3, k);
  if (l && r && u && d2) {
    Vec3 n = (*r - *l).cross(*d2 - *u);
    double nn = n.norm();
    if (nn > 1e-12) {
      n /= nn;
      if (n.dot(p) > 0) n = -n;  // face the camera
      return n;
    }
  }
  return -p.normalized();
}

}  // namespace

ClassifiedCloud classify_scene(const RgbdFrame& frame, const colorpair::ClassDb& db,
                               const colorpair::ExtractionParams& extraction) {
  frame.validate();
  bool any_mask = false;
  for (uint8_t m : frame.mask.data())
    if (m) {
      any_mask = true;
      break;
    }
  if (!any_mask) throw EmptyMask("classify_scene: object mask is empty");

  auto result = colorpair::extract_color_pairs(frame.rgb, frame.mask, extraction);
  auto labels = colorpair::classify_pairs(result.pairs, db);

  ClassifiedCloud cloud;
  for (size_t i = 0; i < result.pairs.size(); ++i) {
    int px = static_cast<int>(result.pairs[i].pixel.x());
    int py = static_cast<int>(result.pairs[i].pixel.y());
    uint16_t d = frame.depth.at(px, py);
    if (d == 0) continue;
    cloud.points.push_back(lift(px, py, d * 1e-3, frame.intrinsics));
    cloud.class_ids.push_back(labels[i].class_id);
    cloud.weights.push_back(labels[i].class_id < 0 ? 0.0 : labels[i].weight);
    cloud.normals.push_back(depth_normal(frame.depth, frame.intrinsics, px, py));
  }
  if (!result.pairs.empty() && cloud.points.empty())
    throw NoValidDepth("classify_scene: no edge pixel has valid depth");
  return cloud;
}

namespace {

struct TriangleCandidate {
  int a, b, c;  // ascending vertex indices
};

SemanticTriangle make_triangle(const ClassifiedCloud& cloud, int a, int b, int c,
                               const Vec3& object_center, double r0) {
  SemanticTriangle t;
  t.vertex_indices = {a, b, c};
  t.classes = {cloud.class_ids[a], cloud.class_ids[b], cloud.class_ids[c]};
  const Vec3 &pa = cloud.points[a], &pb = cloud.points[b], &pc = cloud.points[c];
  t.side_lengths = {(pa - pb).norm(), (pb - pc).norm(), (pc - pa).norm()};
  t.area = 0.5 * (pb - pa).cross(pc - pa).norm();
  t.centroid = (pa + pb + pc) / 3.0;
  t.quality = t.area * (1.0 + (t.centroid - object_center).norm() / r0);
  return t;
}

bool triangle_order_less(const SemanticTriangle& x, const SemanticTriangle& y) {
  if (x.quality != y.quality) return x.quality > y.quality;
  return x.vertex_indices < y.vertex_indices;
}

}  // namespace

std::vector<SemanticTriangle> select_semantic_triangles(const ClassifiedCloud& cloud,
                                                        const Vec3& object_center, int max_count,
                                                        const TriangleSelectParams& params) {
  cloud.validate();
  const int n = static_cast<int>(cloud.size());

  std::vector<int> classified;
  std::map<int, int> class_counts;
  for (int i = 0; i < n; ++i) {
    if (cloud.class_ids[i] >= 0) {
      classified.push_back(i);
      class_counts[cloud.class_ids[i]]++;
    }
  }
  if (class_counts.size() < 3)
    throw InsufficientClasses("select_semantic_triangles: fewer than 3 classes present");

  double r0 = 0.0;
  for (int i : classified) r0 = std::max(r0, (cloud.points[i] - object_center).norm());
  if (r0 <= 0.0) r0 = 1.0;

  std::vector<SemanticTriangle> best;
  auto consider = [&](int a, int b, int c) {
    if (cloud.class_ids[a] == cloud.class_ids[b] || cloud.class_ids[b] == cloud.class_ids[c] ||
        cloud.class_ids[a] == cloud.class_ids[c])
      return;
    SemanticTriangle t = make_triangle(cloud, a, b, c, object_center, r0);
    if (t.area <= params.min_area) return;
    best.push_back(std::move(t));
  };

  const int m = static_cast<int>(classified.size());
  if (m <= params.full_enum_limit) {
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        for (int k = j + 1; k < m; ++k) consider(classified[i], classified[j], classified[k]);
  } else {
    // Candidate triples from the neighborhood of their lowest-index vertex.
    std::vector<Vec3> pts;
    pts.reserve(m);
    for (int i : classified) pts.push_back(cloud.points[i]);
    KdTree3 tree(pts);
    const int cap = std::min(params.neighbor_cap, m - 1);
    for (int i = 0; i < m; ++i) {
      auto nn = tree.knn(pts[i], cap + 1);
      std::vector<int> nbrs;
      for (const auto& [d, j] : nn)
        if (j > i) nbrs.push_back(j);
      for (size_t u = 0; u < nbrs.size(); ++u)
        for (size_t v = u + 1; v < nbrs.size(); ++v)
          consider(classified[i], classified[std::min(nbrs[u], nbrs[v])],
                   classified[std::max(nbrs[u], nbrs[v])]);
    }
  }

  std::sort(best.begin(), best.end(), triangle_order_less);
  if (static_cast<int>(best.size()) > max_count) best.resize(max_count);
  return best;
}

namespace {

// Side slot between two vertex slots: {0,1}->0, {1,2}->1, {0,2}->2.
inline int side_slot(int p, int q) {
  int lo = std::min(p, q), hi = std::max(p, q);
  if (lo == 0 && hi == 1) return 0;
  if (lo == 1 && hi == 2) return 1;
  return 2;
}

inline int64_t quantize(double value, double step) {
  return static_cast<int64_t>(std::floor(value / step));
}

}  // namespace

TriangleKey triangle_feature_key(const SemanticTriangle& t, const QuantizationSteps& steps) {
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return t.classes[a] < t.classes[b]; });
  TriangleKey key;
  for (int i = 0; i < 3; ++i) key.v[i] = t.classes[order[i]];
  for (int i = 0; i < 3; ++i) {
    int slot = side_slot(order[i], order[(i + 1) % 3]);
    key.v[3 + i] = quantize(t.side_lengths[slot], steps.length_step);
  }
  key.v[6] = quantize(t.area, steps.area_step);
  return key;
}

namespace {

PpfKey ppf_key(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2, double dist_step,
               double angle_step) {
  Vec3 d = p2 - p1;
  double dist = d.norm();
  Vec3 dn = d / dist;
  auto angle = [](const Vec3& a, const Vec3& b) {
    return std::acos(std::clamp(a.dot(b), -1.0, 1.0));
  };
  PpfKey key;
  key.v[0] = quantize(dist, dist_step);
  key.v[1] = quantize(angle(n1, dn), angle_step);
  key.v[2] = quantize(angle(n2, dn), angle_step);
  key.v[3] = quantize(angle(n1, n2), angle_step);
  return key;
}

// Deterministic subsample: evenly strided indices.
std::vector<int> strided_sample(int n, int target) {
  std::vector<int> out;
  if (n <= target) {
    out.resize(n);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  double stride = static_cast<double>(n) / target;
  for (int i = 0; i < target; ++i) out.push_back(static_cast<int>(i * stride));
  return out;
}

}  // namespace

TriangleHashDb build_hash_db(const ClassifiedCloud& model_cloud, const HashDbParams& params) {
  model_cloud.validate();
  TriangleHashDb db;
  db.steps = params.steps;
  db.ppf_angle_step_rad = params.ppf_angle_step_rad;
  db.ppf_dist_step = params.ppf_dist_step;

  std::map<int, int> class_counts;
  for (int c : model_cloud.class_ids)
    if (c >= 0) class_counts[c]++;

  if (class_counts.size() >= 3) {
    auto triangles = select_semantic_triangles(model_cloud, model_cloud.centroid(),
                                               params.max_triangles, params.select);
    for (const auto& t : triangles) {
      if (t.quality < db.quality_threshold) continue;
      TriangleKey key = triangle_feature_key(t, db.steps);
      std::array<int, 3> order = {0, 1, 2};
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return t.classes[a] < t.classes[b]; });
      ModelTriple triple;
      for (int i = 0; i < 3; ++i) triple.vertices[i] = model_cloud.points[t.vertex_indices[order[i]]];
      db.triangles[key].push_back(triple);
    }
  }

  if (model_cloud.has_normals()) {
    auto idx = strided_sample(static_cast<int>(model_cloud.size()), params.ppf_sample_target);
    for (size_t a = 0; a < idx.size(); ++a) {
      for (size_t b = 0; b < idx.size(); ++b) {
        if (a == b) continue;
        int i = idx[a], j = idx[b];
        const Vec3 &p1 = model_cloud.points[i], &p2 = model_cloud.points[j];
        if ((p2 - p1).norm() < params.ppf_min_dist) continue;
        PpfKey key = ppf_key(p1, model_cloud.normals[i], p2, model_cloud.normals[j],
                             db.ppf_dist_step, db.ppf_angle_step_rad);
        db.ppf_templates[key].push_back(
            {p1, model_cloud.normals[i], p2, model_cloud.normals[j]});
      }
    }
  }

  if (db.triangles.empty() && db.ppf_templates.empty())
    throw InsufficientClasses(
        "build_hash_db: fewer than 3 classes and no normals for the PPF fallback");
  return db;
}

Se3Pose kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
               const std::vector<double>& weights) {
  if (src.size() != dst.size() || src.size() != weights.size())
    throw LengthMismatch("kabsch: array lengths differ");
  if (src.size() < 3) throw DegenerateConfiguration("kabsch: need at least 3 points");

  double wsum = 0.0;
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    if (weights[i] < 0) throw DataError("kabsch: negative weight");
    wsum += weights[i];
    mu_s += weights[i] * src[i];
    mu_d += weights[i] * dst[i];
  }
  if (wsum <= 0) throw DegenerateConfiguration("kabsch: total weight is zero");
  mu_s /= wsum;
  mu_d /= wsum;

  Mat3 h = Mat3::Zero();
  for (size_t i = 0; i < src.size(); ++i)
    h += weights[i] * (src[i] - mu_s) * (dst[i] - mu_d).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  if (sv(1) < 1e-9 * std::max(sv(0), 1e-12))
    throw DegenerateConfiguration("kabsch: source points are collinear");

  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  Se3Pose out;
  out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  out.translation = mu_d - out.rotation * mu_s;
  return out;
}

std::vector<int> center_aligned_indices(int total, int count) {
  std::vector<int> out;
  if (total <= 0 || count <= 0) return out;
  if (count >= total) {
    out.resize(total);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  const double stride = static_cast<double>(total) / count;
  const double center = (total - 1) / 2.0;
  for (int j = 0; j < count; ++j) {
    double pos = center + (j - (count - 1) / 2.0) * stride;
    double idx = pos < center ? std::ceil(pos) : std::floor(pos);
    out.push_back(std::clamp(static_cast<int>(idx), 0, total - 1));
  }
  // Collisions from the center pull are resolved by nearest free slots.
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  int next = 0;
  while (static_cast<int>(out.size()) < count && next < total) {
    if (!std::binary_search(out.begin(), out.end(), next)) {
      out.push_back(next);
      std::sort(out.begin(), out.end());
    }
    ++next;
  }
  return out;
}

namespace {

Se3Pose pose_from_pair_frames(const Vec3& sp1, const Vec3& sn1, const Vec3& sp2, const Vec3& mp1,
                              const Vec3& mn1, const Vec3& mp2) {
  auto frame = [](const Vec3& p, const Vec3& n, const Vec3& q) -> std::optional<Mat3> {
    Vec3 x = n.normalized();
    Vec3 v = q - p;
    Vec3 z = x.cross(v);
    double zn = z.norm();
    if (zn < 1e-9) return std::nullopt;
    z /= zn;
    Mat3 f;
    f.col(0) = x;
    f.col(1) = z.cross(x);
    f.col(2) = z;
    return f;
  };
  auto fs = frame(sp1, sn1, sp2);
  auto fm = frame(mp1, mn1, mp2);
  if (!fs || !fm) throw DegenerateConfiguration("ppf pair frame is degenerate");
  Se3Pose out;
  out.rotation = (*fs) * fm->transpose();
  out.translation = sp1 - out.rotation * mp1;
  return out;
}

std::vector<PoseHypothesis> ppf_hypotheses(const ClassifiedCloud& scene, const TriangleHashDb& db,
                                           const HypothesisParams& params) {
  std::vector<PoseHypothesis> hyps;
  if (!scene.has_normals() || db.ppf_templates.empty()) return hyps;
  auto idx = strided_sample(static_cast<int>(scene.size()), params.ppf_scene_sample);
  int feature_id = 0;
  for (size_t a = 0; a < idx.size() && static_cast<int>(hyps.size()) < params.max_hypotheses; ++a) {
    for (size_t b = 0; b < idx.size(); ++b) {
      if (a == b) continue;
      int i = idx[a], j = idx[b];
      const Vec3 &p1 = scene.points[i], &p2 = scene.points[j];
      double dist = (p2 - p1).norm();
      if (dist < 1e-6) continue;
      PpfKey key = ppf_key(p1, scene.normals[i], p2, scene.normals[j], db.ppf_dist_step,
                           db.ppf_angle_step_rad);
      // +-1 bin probe over the 4 quantized dimensions
      std::vector<const PpfEntry*> matches;
      PpfKey probe;
      for (int d0 = -1; d0 <= 1; ++d0)
        for (int d1 = -1; d1 <= 1; ++d1)
          for (int d2 = -1; d2 <= 1; ++d2)
            for (int d3 = -1; d3 <= 1; ++d3) {
              probe.v = {key.v[0] + d0, key.v[1] + d1, key.v[2] + d2, key.v[3] + d3};
              auto it = db.ppf_templates.find(probe);
              if (it == db.ppf_templates.end()) continue;
              for (const auto& e : it->second) matches.push_back(&e);
            }
      if (matches.empty()) continue;
      auto chosen = center_aligned_indices(static_cast<int>(matches.size()), params.max_per_key);
      for (int mi : chosen) {
        const PpfEntry& e = *matches[mi];
        try {
          Se3Pose pose = pose_from_pair_frames(p1, scene.normals[i], p2, e.p1, e.n1, e.p2);
          hyps.push_back({pose, 1.0, PoseHypothesis::Source::ppf, feature_id});
        } catch (const DegenerateConfiguration&) {
        }
        if (static_cast<int>(hyps.size()) >= params.max_hypotheses) break;
      }
      ++feature_id;
      if (static_cast<int>(hyps.size()) >= params.max_hypotheses) break;
    }
  }
  return hyps;
}

}  // namespace

std::vector<PoseHypothesis> generate_hypotheses(const ClassifiedCloud& scene,
                                                const TriangleHashDb& db,
                                                const HypothesisParams& params) {
  std::vector<PoseHypothesis> hyps;

  std::map<int, int> class_counts;
  for (int c : scene.class_ids)
    if (c >= 0) class_counts[c]++;

  if (class_counts.size() >= 3 && !db.triangles.empty()) {
    auto triangles = select_semantic_triangles(scene, scene.centroid(),
                                               params.max_scene_triangles, params.select);
    for (size_t ti = 0; ti < triangles.size(); ++ti) {
      const auto& t = triangles[ti];
      TriangleKey key = triangle_feature_key(t, db.steps);

      std::vector<const ModelTriple*> matches;
      TriangleKey probe = key;
      for (int d0 = -1; d0 <= 1; ++d0)
        for (int d1 = -1; d1 <= 1; ++d1)
          for (int d2 = -1; d2 <= 1; ++d2)
            for (int d3 = -1; d3 <= 1; ++d3) {
              probe.v[3] = key.v[3] + d0;
              probe.v[4] = key.v[4] + d1;
              probe.v[5] = key.v[5] + d2;
              probe.v[6] = key.v[6] + d3;
              auto it = db.triangles.find(probe);
              if (it == db.triangles.end()) continue;
              for (const auto& triple : it->second) matches.push_back(&triple);
            }
      if (matches.empty()) continue;

      // Scene vertices in canonical class order pair up with stored triples.
      std::array<int, 3> order = {0, 1, 2};
      std::sort(order.begin(), order.end(),
                [&](int a, int b) { return t.classes[a] < t.classes[b]; });
      std::vector<Vec3> scene_pts(3);
      double weight = 1.0;
      for (int i = 0; i < 3; ++i) {
        int vi = t.vertex_indices[order[i]];
        scene_pts[i] = scene.points[vi];
        weight *= scene.weights[vi];
      }
      if (weight <= 0) continue;

      auto chosen = center_aligned_indices(static_cast<int>(matches.size()), params.max_per_key);
      for (int mi : chosen) {
        const ModelTriple& triple = *matches[mi];
        std::vector<Vec3> model_pts(triple.vertices.begin(), triple.vertices.end());
        try {
          Se3Pose pose = kabsch(model_pts, scene_pts, {1.0, 1.0, 1.0});
          hyps.push_back({pose, weight, PoseHypothesis::Source::triangle, static_cast<int>(ti)});
        } catch (const DegenerateConfiguration&) {
        }
      }
      if (static_cast<int>(hyps.size()) >= params.max_hypotheses) {
        hyps.resize(params.max_hypotheses);
        break;
      }
    }
  }

  if (hyps.empty()) hyps = ppf_hypotheses(scene, db, params);
  if (hyps.empty()) throw NoHypotheses("generate_hypotheses: no pose hypotheses produced");
  return hyps;
}

namespace {

struct Bin6 {
  std::array<int64_t, 6> v{};
  auto operator<=>(const Bin6&) const = default;
};

struct Bin6Hash {
  size_t operator()(const Bin6& b) const {
    uint64_t h = 1469598103934665603ull;
    for (int64_t x : b.v) {
      h ^= static_cast<uint64_t>(x);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

Bin6 pose_bin(const Se3Pose& pose, double rot_step, double trans_step) {
  Eigen::AngleAxisd aa(pose.rotation);
  Vec3 rv = aa.axis() * aa.angle();
  Bin6 b;
  for (int i = 0; i < 3; ++i) b.v[i] = quantize(rv[i], rot_step);
  for (int i = 0; i < 3; ++i) b.v[3 + i] = quantize(pose.translation[i], trans_step);
  return b;
}

bool bins_adjacent(const Bin6& a, const Bin6& b) {
  for (int i = 0; i < 6; ++i)
    if (std::abs(a.v[i] - b.v[i]) > 1) return false;
  return true;
}

// Representative = best hypothesis per (bin, feature): one scene feature
// cannot stack votes inside a single bin.
struct BinAccumulator {
  std::unordered_map<Bin6, std::map<int, int>, Bin6Hash> best;  // feature -> hyp index

  void add(const Bin6& bin, int feature, int hyp_index, const std::vector<PoseHypothesis>& hyps) {
    auto& slot = best[bin];
    auto it = slot.find(feature);
    if (it == slot.end() || hyps[hyp_index].weight > hyps[it->second].weight)
      slot[feature] = hyp_index;
  }
};

Se3Pose weighted_pose_mean(const std::vector<int>& members,
                           const std::vector<PoseHypothesis>& hyps) {
  double wsum = 0.0;
  Vec3 t = Vec3::Zero();
  Eigen::Vector4d q_acc = Eigen::Vector4d::Zero();
  Eigen::Quaterniond q_ref(hyps[members.front()].pose.rotation);
  for (int i : members) {
    double w = hyps[i].weight;
    wsum += w;
    t += w * hyps[i].pose.translation;
    Eigen::Quaterniond q(hyps[i].pose.rotation);
    if (q.coeffs().dot(q_ref.coeffs()) < 0) q.coeffs() = -q.coeffs();
    q_acc += w * q.coeffs();
  }
  Se3Pose out;
  out.translation = t / wsum;
  Eigen::Quaterniond q_mean;
  q_mean.coeffs() = q_acc.normalized();
  out.rotation = q_mean.toRotationMatrix();
  return out;
}

}  // namespace

std::vector<ScoredPose> hough_vote(const std::vector<PoseHypothesis>& hyps,
                                   const HoughParams& params) {
  if (hyps.empty()) throw NoHypotheses("hough_vote: no hypotheses");

  // Stage 1: coarse bins with per-feature capping.
  BinAccumulator coarse;
  for (size_t i = 0; i < hyps.size(); ++i) {
    Bin6 bin = pose_bin(hyps[i].pose, params.coarse_rot_step_rad, params.coarse_trans_step);
    coarse.add(bin, hyps[i].feature_id, static_cast<int>(i), hyps);
  }

  std::vector<std::pair<Bin6, double>> coarse_totals;
  for (const auto& [bin, slot] : coarse.best) {
    double total = 0.0;
    for (const auto& [feature, hyp_index] : slot) total += hyps[hyp_index].weight;
    coarse_totals.emplace_back(bin, total);
  }
  std::sort(coarse_totals.begin(), coarse_totals.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  double best_total = coarse_totals.front().second;
  std::vector<Bin6> survivors;
  for (const auto& [bin, total] : coarse_totals) {
    if (total < params.survivor_ratio * best_total) break;
    survivors.push_back(bin);
    if (static_cast<int>(survivors.size()) >= params.max_survivor_bins) break;
  }

  // Stage 2: fine re-binning of hypotheses near surviving coarse bins.
  BinAccumulator fine;
  for (size_t i = 0; i < hyps.size(); ++i) {
    Bin6 cb = pose_bin(hyps[i].pose, params.coarse_rot_step_rad, params.coarse_trans_step);
    bool near = false;
    for (const auto& s : survivors)
      if (bins_adjacent(cb, s)) {
        near = true;
        break;
      }
    if (!near) continue;
    Bin6 fb = pose_bin(hyps[i].pose, params.fine_rot_step_rad, params.fine_trans_step);
    fine.add(fb, hyps[i].feature_id, static_cast<int>(i), hyps);
  }

  std::vector<std::pair<Bin6, double>> fine_totals;
  fine_totals.reserve(fine.best.size());
  for (const auto& [bin, slot] : fine.best) {
    double total = 0.0;
    for (const auto& [feature, hyp_index] : slot) total += hyps[hyp_index].weight;
    fine_totals.emplace_back(bin, total);
  }
  std::sort(fine_totals.begin(), fine_totals.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  // 6D NMS: keep bins that dominate every adjacent competitor.
  std::vector<ScoredPose> out;
  for (const auto& [bin, total] : fine_totals) {
    bool is_max = true;
    for (const auto& [other, other_total] : fine_totals) {
      if (other == bin) continue;
      if (!bins_adjacent(bin, other)) continue;
      if (other_total > total || (other_total == total && other < bin)) {
        is_max = false;
        break;
      }
    }
    if (!is_max) continue;
    std::vector<int> members;
    for (const auto& [feature, hyp_index] : fine.best.at(bin)) members.push_back(hyp_index);
    out.push_back({weighted_pose_mean(members, hyps), total});
    if (static_cast<int>(out.size()) >= params.top_k) break;
  }
  return out;
}

}  // namespace pf::reg

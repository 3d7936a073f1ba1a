#pragma once

#include "poseforge/colorpair.hpp"
#include "poseforge/core.hpp"

#include <array>
#include <unordered_map>

namespace pf::reg {

// 3D edge points labeled with color-pair class ids and confidence weights.
struct ClassifiedCloud {
  std::vector<Vec3> points;
  std::vector<int> class_ids;    // -1 = unclassified
  std::vector<double> weights;   // 0 exactly where class_id = -1
  std::vector<Vec3> normals;     // empty or one per point

  size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
  void validate() const;
  Vec3 centroid() const;
};

struct SemanticTriangle {
  std::array<int, 3> vertex_indices{};
  std::array<int, 3> classes{};       // pairwise distinct
  std::array<double, 3> side_lengths{};  // meters
  double area = 0.0;                  // m^2
  Vec3 centroid = Vec3::Zero();
  double quality = 0.0;
};

// Canonical class triple + quantized side lengths + quantized area.
struct TriangleKey {
  std::array<int64_t, 7> v{};
  bool operator==(const TriangleKey&) const = default;
};

struct TriangleKeyHash {
  size_t operator()(const TriangleKey& k) const {
    uint64_t h = 1469598103934665603ull;
    for (int64_t x : k.v) {
      h ^= static_cast<uint64_t>(x);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

struct PpfKey {
  std::array<int64_t, 4> v{};
  bool operator==(const PpfKey&) const = default;
};

struct PpfKeyHash {
  size_t operator()(const PpfKey& k) const {
    uint64_t h = 1469598103934665603ull;
    for (int64_t x : k.v) {
      h ^= static_cast<uint64_t>(x);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

struct QuantizationSteps {
  double length_step = 0.005;   // 5 mm
  double area_step = 25e-6;     // 25 mm^2
};

// Model vertex triple stored in canonical class order.
struct ModelTriple {
  std::array<Vec3, 3> vertices;
};

struct PpfEntry {
  Vec3 p1, n1, p2, n2;
};

struct TriangleHashDb {
  QuantizationSteps steps;
  double quality_threshold = 0.0;
  std::unordered_map<TriangleKey, std::vector<ModelTriple>, TriangleKeyHash> triangles;
  double ppf_angle_step_rad = 10.0 * M_PI / 180.0;
  double ppf_dist_step = 0.0025;
  std::unordered_map<PpfKey, std::vector<PpfEntry>, PpfKeyHash> ppf_templates;
};

struct PoseHypothesis {
  Se3Pose pose;
  double weight = 1.0;
  enum class Source { triangle, ppf } source = Source::triangle;
  int feature_id = 0;  // scene feature index, drives the per-feature vote cap
};

struct ScoredPose {
  Se3Pose pose;
  double score = 0.0;
};

ClassifiedCloud classify_scene(const RgbdFrame& frame, const colorpair::ClassDb& db,
                               const colorpair::ExtractionParams& extraction = {});

struct TriangleSelectParams {
  double min_area = 1e-5;    // m^2, collinearity gate
  int neighbor_cap = 32;     // candidate pairs come from this many neighbors
  int full_enum_limit = 150; // below this point count, enumerate all triples
};

// Top max_count triangles by quality = area * (1 + |centroid - center| / r0),
// r0 being the cloud's bounding-sphere radius around object_center.
std::vector<SemanticTriangle> select_semantic_triangles(const ClassifiedCloud& cloud,
                                                        const Vec3& object_center, int max_count,
                                                        const TriangleSelectParams& params = {});

TriangleKey triangle_feature_key(const SemanticTriangle& t, const QuantizationSteps& steps);

struct HashDbParams {
  QuantizationSteps steps;
  TriangleSelectParams select;
  int max_triangles = 4000;
  int ppf_sample_target = 256;
  double ppf_min_dist = 0.005;
  double ppf_angle_step_rad = 10.0 * M_PI / 180.0;
  double ppf_dist_step = 0.0025;
};

TriangleHashDb build_hash_db(const ClassifiedCloud& model_cloud, const HashDbParams& params = {});

// Weighted least-squares rigid transform mapping src onto dst.
Se3Pose kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
               const std::vector<double>& weights);

// Center-aligned equidistant index sampling for one-to-many matches.
std::vector<int> center_aligned_indices(int total, int count);

struct HypothesisParams {
  TriangleSelectParams select;
  int max_scene_triangles = 400;
  int max_per_key = 8;
  int max_hypotheses = 4000;
  int ppf_scene_sample = 200;
};

std::vector<PoseHypothesis> generate_hypotheses(const ClassifiedCloud& scene,
                                                const TriangleHashDb& db,
                                                const HypothesisParams& params = {});

struct HoughParams {
  double coarse_rot_step_rad = 30.0 * M_PI / 180.0;
  double coarse_trans_step = 0.05;
  double fine_rot_step_rad = 7.5 * M_PI / 180.0;
  double fine_trans_step = 0.01;
  int top_k = 5;
  double survivor_ratio = 0.3;  // coarse bins kept relative to the best bin
  int max_survivor_bins = 12;
};

// Two-stage coarse-to-fine vote with per-feature capping and 6D NMS.
std::vector<ScoredPose> hough_vote(const std::vector<PoseHypothesis>& hyps,
                                   const HoughParams& params = {});

}  // namespace pf::reg

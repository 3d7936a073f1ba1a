#pragma once

#include "poseforge/colorpair.hpp"
#include "poseforge/core.hpp"
#include "poseforge/refine.hpp"
#include "poseforge/registration.hpp"
#include "poseforge/synth.hpp"

namespace pf::track {

struct FlowParams {
  int pyramid_levels = 4;
  int window_radius = 10;   // 21x21 window
  int max_iters = 30;
  double epsilon = 0.01;    // px, per-level update floor
  double fb_threshold = 1.0;  // forward-backward gate, px
  int max_seeds = 1200;
  double min_eig = 1e-4;    // structure tensor gate
};

struct FlowMatch {
  Vec2 prev_px;
  Vec2 cur_px;
};

// Pyramidal sparse Lucas-Kanade seeded at masked edge-centerline pixels of
// the previous frame, pruned by a forward-backward consistency check.
// prev_edges, when given, skips recomputing the seed edge map.
std::vector<FlowMatch> flow_correspondences(const RgbdFrame& prev, const RgbdFrame& cur,
                                            const MaskImage& mask, const FlowParams& params = {},
                                            const colorpair::EdgeMap* prev_edges = nullptr);

using FlowField = Image<Eigen::Vector2f>;  // dense (dx, dy) per pixel

// External-flow entry point: samples a dense field at the same seeds.
std::vector<FlowMatch> flow_from_field(const RgbdFrame& prev, const FlowField& field,
                                       const MaskImage& mask, const FlowParams& params = {},
                                       const colorpair::EdgeMap* prev_edges = nullptr);

struct FilterParams {
  double threshold = 0.7;
  double lightness_weight = 0.3;
  double search_radius_px = 2.0;  // nearest centerline search
  bool require_edges = true;
  colorpair::SampleParams sample;
};

struct FilteredMatches {
  std::vector<FlowMatch> matches;
  std::vector<double> similarities;  // per kept match
  std::vector<int> indices;          // positions in the input match list
};

// Keeps matches whose endpoint color-pairs agree; endpoints without a nearby
// centerline survive only when require_edges is false (similarity 1).
FilteredMatches filter_by_colorpair(const std::vector<FlowMatch>& matches,
                                    const LabImage& prev_lab, const LabImage& cur_lab,
                                    const colorpair::EdgeMap& prev_edges,
                                    const colorpair::EdgeMap& cur_edges,
                                    const FilterParams& params = {});

// Canonical look-at frame: columns of r_p are the basis (x', y', z') built
// from the camera-to-centroid direction and the up vector.
struct CanonicalFrame {
  Mat3 r_p = Mat3::Identity();
  Vec3 t_est = Vec3::Zero();
  Vec3 up = Vec3(0, -1, 0);
};

std::pair<PointCloud, CanonicalFrame> perspective_normalize(const PointCloud& cloud,
                                                            const Vec3& t_est,
                                                            const Vec3& u = Vec3(0, -1, 0));

// Layout: normalized p1 (0-2), normalized p2 (3-5), projection of p1 (6-7),
// projection of p2 (8-9), 3D flow p2-p1 (10-12), 2D flow (13-14).
// Projections are normalized coordinates of a virtual camera looking down
// the canonical +z axis from the original centroid distance.
struct MotionFeature {
  std::array<double, 15> v{};
};

std::vector<MotionFeature> build_motion_features(const PointCloud& p1, const PointCloud& p2,
                                                 const CanonicalFrame& frame);

// Robust rotation-only Kabsch on centered clouds with two rounds of
// MAD-gated reweighting. An alternate estimator consuming MotionFeature
// lists can be registered behind the same contract.
Mat3 estimate_relative_rotation(const PointCloud& p1, const PointCloud& p2,
                                const std::vector<double>& weights = {});

using RotationEstimator = Mat3 (*)(const std::vector<MotionFeature>&);
void register_rotation_estimator(RotationEstimator estimator);
void clear_rotation_estimator();

// R_rel = R_p2 * R_canonical * R_p1^T
Mat3 camera_rotation_from_canonical(const Mat3& canonical_rotation, const CanonicalFrame& f1,
                                    const CanonicalFrame& f2);

// Component-wise weighted median of p2_i - R_rel * p1_i, camera frame.
Vec3 estimate_relative_translation(const Mat3& rotation, const PointCloud& p1_cam,
                                   const PointCloud& p2_cam,
                                   const std::vector<double>& weights = {});

struct TrackParams {
  FlowParams flow;
  FilterParams filter;
  colorpair::ExtractionParams extraction;
  int min_matches = 12;       // TrackingLost floor
  int icp_fixed_iters = 5;
  refine::PointToPlaneParams icp;
  int icp_scene_max = 2000;   // scene cloud subsample for the polish
};

struct TrackState {
  Se3Pose pose;
  RgbdFrame prev_frame;
  MaskImage prev_mask;
  reg::ClassifiedCloud model;  // model frame, with normals
  int frame_index = 0;
  // caches carried between steps
  LabImage prev_lab;
  colorpair::EdgeMap prev_edges;
};

TrackState make_track_state(const Se3Pose& pose, const RgbdFrame& frame,
                            const reg::ClassifiedCloud& model, const TrackParams& params = {});

struct TrackStepResult {
  TrackState state;
  Se3Pose pose;
  int used_matches = 0;
};

TrackStepResult track_step(const TrackState& state, const RgbdFrame& frame,
                           const TrackParams& params = {});

// Procedurally generated two-view training pairs with exact relative pose.
struct TrainingPairParams {
  double max_rot = 0.35;       // radians
  double max_trans = 0.03;     // meters
  double depth_noise_mm = 2.0;
  double dropout_prob = 0.05;
  int min_classes = 3;
  int max_pairs_per_item = 400;
  CameraIntrinsics intrinsics;  // defaults to synth::default_intrinsics()

  TrainingPairParams();
};

struct TrainingPair {
  PointCloud cloud1, cloud2;  // camera frame, index-paired
  Se3Pose relative;           // p2 = relative(p1) for noiseless points
};

class TrainingPairStream {
 public:
  TrainingPairStream(uint64_t seed, const TrainingPairParams& params = {});
  TrainingPair next();

 private:
  uint64_t seed_;
  uint64_t item_ = 0;
  TrainingPairParams params_;
};

}  // namespace pf::track

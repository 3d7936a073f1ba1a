#pragma once

#include "poseforge/colorpair.hpp"
#include "poseforge/core.hpp"
#include "poseforge/refine.hpp"
#include "poseforge/registration.hpp"
#include "poseforge/synth.hpp"
#include "poseforge/tracking.hpp"

#include <filesystem>

namespace pf {

// Flat, documented key set (see README); CLI flags override file values and
// POSE_FORGE_SEED overrides the seed.
struct PipelineConfig {
  uint64_t seed = 0;
  CameraIntrinsics camera = synth::default_intrinsics();

  // colorpair
  double lightness_weight = 0.3;
  double similarity_threshold = 0.85;
  double bilateral_spatial_sigma = 1.5;
  double bilateral_range_sigma = 8.0;
  double gradient_threshold = 3.0;
  double sample_gate = 2.0;

  // registration
  double length_step = 0.005;
  double area_step = 25e-6;
  double min_triangle_area = 1e-5;
  int max_db_triangles = 4000;
  int max_scene_triangles = 400;
  int max_per_key = 8;
  int max_hypotheses = 4000;
  int ppf_sample_target = 256;

  // hough
  double coarse_rot_deg = 30.0;
  double coarse_trans = 0.05;
  double fine_rot_deg = 7.5;
  double fine_trans = 0.01;
  int top_k = 5;

  // icp
  int icp_pyramid_levels = 3;
  int icp_max_iters_per_level = 15;
  double icp_robust_kernel_scale = 0.005;
  double icp_aggregate_weight = 0.5;
  double icp_unclassified_weight = 0.5;

  // tracking
  double filter_threshold = 0.7;
  int min_matches = 12;
  int track_icp_fixed_iters = 5;
  int flow_levels = 4;
  int flow_window_radius = 10;
  bool require_edges = true;

  // synth
  int view_count = 12;
  int min_classes = 3;
  int sequence_length = 60;
  double max_deg_per_frame = 2.0;
  double max_mm_per_frame = 4.0;
  double depth_noise_mm = 0.0;
  double dropout_prob = 0.0;

  colorpair::ExtractionParams extraction_params() const;
  reg::HashDbParams hash_db_params() const;
  reg::HypothesisParams hypothesis_params() const;
  reg::HoughParams hough_params() const;
  refine::IcpParams icp_params() const;
  track::TrackParams track_params() const;
  synth::ModelCloudParams model_cloud_params() const;
  synth::ShapeParams shape_params() const;
  synth::SequenceParams sequence_params() const;

  void validate() const;

  static PipelineConfig load(const std::filesystem::path& path);
  void apply_file(const std::filesystem::path& path);
  void apply_key(const std::string& key, const std::string& value);
  void save(const std::filesystem::path& path) const;
};

}  // namespace pf

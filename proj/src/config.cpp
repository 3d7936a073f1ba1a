#include "poseforge/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <map>

namespace pf {

namespace {

using nlohmann::json;

struct Field {
  std::function<json(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const json&)> set;
};

#define PF_FIELD(member)                                                       \
  Field{[](const PipelineConfig& c) { return json(c.member); },               \
        [](PipelineConfig& c, const json& v) { v.get_to(c.member); }}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = {
      {"seed", PF_FIELD(seed)},
      {"camera.fx", PF_FIELD(camera.fx)},
      {"camera.fy", PF_FIELD(camera.fy)},
      {"camera.cx", PF_FIELD(camera.cx)},
      {"camera.cy", PF_FIELD(camera.cy)},
      {"camera.width", PF_FIELD(camera.width)},
      {"camera.height", PF_FIELD(camera.height)},
      {"colorpair.lightness_weight", PF_FIELD(lightness_weight)},
      {"colorpair.similarity_threshold", PF_FIELD(similarity_threshold)},
      {"colorpair.bilateral_spatial_sigma", PF_FIELD(bilateral_spatial_sigma)},
      {"colorpair.bilateral_range_sigma", PF_FIELD(bilateral_range_sigma)},
      {"colorpair.gradient_threshold", PF_FIELD(gradient_threshold)},
      {"colorpair.sample_gate", PF_FIELD(sample_gate)},
      {"registration.length_step", PF_FIELD(length_step)},
      {"registration.area_step", PF_FIELD(area_step)},
      {"registration.min_triangle_area", PF_FIELD(min_triangle_area)},
      {"registration.max_db_triangles", PF_FIELD(max_db_triangles)},
      {"registration.max_scene_triangles", PF_FIELD(max_scene_triangles)},
      {"registration.max_per_key", PF_FIELD(max_per_key)},
      {"registration.max_hypotheses", PF_FIELD(max_hypotheses)},
      {"registration.ppf_sample_target", PF_FIELD(ppf_sample_target)},
      {"hough.coarse_rot_deg", PF_FIELD(coarse_rot_deg)},
      {"hough.coarse_trans", PF_FIELD(coarse_trans)},
      {"hough.fine_rot_deg", PF_FIELD(fine_rot_deg)},
      {"hough.fine_trans", PF_FIELD(fine_trans)},
      {"hough.top_k", PF_FIELD(top_k)},
      {"icp.pyramid_levels", PF_FIELD(icp_pyramid_levels)},
      {"icp.max_iters_per_level", PF_FIELD(icp_max_iters_per_level)},
      {"icp.robust_kernel_scale", PF_FIELD(icp_robust_kernel_scale)},
      {"icp.aggregate_weight", PF_FIELD(icp_aggregate_weight)},
      {"icp.unclassified_weight", PF_FIELD(icp_unclassified_weight)},
      {"track.filter_threshold", PF_FIELD(filter_threshold)},
      {"track.min_matches", PF_FIELD(min_matches)},
      {"track.icp_fixed_iters", PF_FIELD(track_icp_fixed_iters)},
      {"track.flow_levels", PF_FIELD(flow_levels)},
      {"track.flow_window_radius", PF_FIELD(flow_window_radius)},
      {"track.require_edges", PF_FIELD(require_edges)},
      {"synth.view_count", PF_FIELD(view_count)},
      {"synth.min_classes", PF_FIELD(min_classes)},
      {"synth.sequence_length", PF_FIELD(sequence_length)},
      {"synth.max_deg_per_frame", PF_FIELD(max_deg_per_frame)},
      {"synth.max_mm_per_frame", PF_FIELD(max_mm_per_frame)},
      {"synth.depth_noise_mm", PF_FIELD(depth_noise_mm)},
      {"synth.dropout_prob", PF_FIELD(dropout_prob)},
  };
  return fields;
}

#undef PF_FIELD

}  // namespace

colorpair::ExtractionParams PipelineConfig::extraction_params() const {
  colorpair::ExtractionParams p;
  p.bilateral_spatial_sigma = bilateral_spatial_sigma;
  p.bilateral_range_sigma = bilateral_range_sigma;
  p.lightness_weight = lightness_weight;
  p.gradient_threshold = gradient_threshold;
  p.sample.gate = sample_gate;
  return p;
}

reg::HashDbParams PipelineConfig::hash_db_params() const {
  reg::HashDbParams p;
  p.steps.length_step = length_step;
  p.steps.area_step = area_step;
  p.select.min_area = min_triangle_area;
  p.max_triangles = max_db_triangles;
  p.ppf_sample_target = ppf_sample_target;
  return p;
}

reg::HypothesisParams PipelineConfig::hypothesis_params() const {
  reg::HypothesisParams p;
  p.select.min_area = min_triangle_area;
  p.max_scene_triangles = max_scene_triangles;
  p.max_per_key = max_per_key;
  p.max_hypotheses = max_hypotheses;
  return p;
}

reg::HoughParams PipelineConfig::hough_params() const {
  reg::HoughParams p;
  p.coarse_rot_step_rad = coarse_rot_deg * M_PI / 180.0;
  p.coarse_trans_step = coarse_trans;
  p.fine_rot_step_rad = fine_rot_deg * M_PI / 180.0;
  p.fine_trans_step = fine_trans;
  p.top_k = top_k;
  return p;
}

refine::IcpParams PipelineConfig::icp_params() const {
  refine::IcpParams p;
  p.pyramid_levels = icp_pyramid_levels;
  p.max_iters_per_level = icp_max_iters_per_level;
  p.robust_kernel_scale = icp_robust_kernel_scale;
  p.aggregate_weight = icp_aggregate_weight;
  p.unclassified_weight = icp_unclassified_weight;
  p.seed = seed;
  return p;
}

track::TrackParams PipelineConfig::track_params() const {
  track::TrackParams p;
  p.flow.pyramid_levels = flow_levels;
  p.flow.window_radius = flow_window_radius;
  p.filter.threshold = filter_threshold;
  p.filter.lightness_weight = lightness_weight;
  p.filter.require_edges = require_edges;
  p.filter.sample.gate = sample_gate;
  p.extraction = extraction_params();
  p.min_matches = min_matches;
  p.icp_fixed_iters = track_icp_fixed_iters;
  return p;
}

synth::ModelCloudParams PipelineConfig::model_cloud_params() const {
  synth::ModelCloudParams p;
  p.view_count = view_count;
  p.class_threshold = similarity_threshold;
  p.lightness_weight = lightness_weight;
  p.extraction = extraction_params();
  return p;
}

synth::ShapeParams PipelineConfig::shape_params() const {
  synth::ShapeParams p;
  p.min_classes = min_classes;
  return p;
}

synth::SequenceParams PipelineConfig::sequence_params() const {
  synth::SequenceParams p;
  p.length = sequence_length;
  p.max_deg_per_frame = max_deg_per_frame;
  p.max_mm_per_frame = max_mm_per_frame;
  p.depth_noise_mm = depth_noise_mm;
  p.dropout_prob = dropout_prob;
  return p;
}

void PipelineConfig::validate() const {
  camera.validate();
  if (lightness_weight <= 0 || lightness_weight > 1)
    throw DataError("config: colorpair.lightness_weight must be in (0,1]");
  if (similarity_threshold <= 0 || similarity_threshold >= 1)
    throw DataError("config: colorpair.similarity_threshold must be in (0,1)");
  if (bilateral_spatial_sigma <= 0 || bilateral_range_sigma <= 0)
    throw DataError("config: bilateral sigmas must be positive");
  if (gradient_threshold <= 0) throw DataError("config: gradient_threshold must be positive");
  if (length_step <= 0 || area_step <= 0) throw DataError("config: quantization steps must be positive");
  if (max_per_key < 1 || max_hypotheses < 1 || max_scene_triangles < 1 || max_db_triangles < 1)
    throw DataError("config: registration counts must be >= 1");
  if (coarse_rot_deg <= fine_rot_deg || coarse_trans <= fine_trans)
    throw DataError("config: coarse bins must be larger than fine bins");
  if (top_k < 1) throw DataError("config: hough.top_k must be >= 1");
  icp_params().validate();
  if (filter_threshold <= 0 || filter_threshold >= 1)
    throw DataError("config: track.filter_threshold must be in (0,1)");
  if (min_matches < 3) throw DataError("config: track.min_matches must be >= 3");
  if (track_icp_fixed_iters < 1) throw DataError("config: track.icp_fixed_iters must be >= 1");
  if (flow_levels < 1 || flow_window_radius < 2) throw DataError("config: invalid flow params");
  if (view_count < 1 || min_classes < 1 || sequence_length < 1)
    throw DataError("config: invalid synth params");
  if (depth_noise_mm < 0 || dropout_prob < 0 || dropout_prob >= 1)
    throw DataError("config: invalid synth noise params");
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  PipelineConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

void PipelineConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("config parse error: " + std::string(e.what()));
  }
  if (!j.is_object()) throw DataError("config: top level must be a JSON object");
  const auto& fields = registry();
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw DataError("config: unknown key '" + key + "'");
    try {
      it->second.set(*this, value);
    } catch (const json::exception&) {
      throw DataError("config: bad value for key '" + key + "'");
    }
  }
  validate();
}

void PipelineConfig::apply_key(const std::string& key, const std::string& value) {
  const auto& fields = registry();
  auto it = fields.find(key);
  if (it == fields.end()) throw DataError("config: unknown key '" + key + "'");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    throw DataError("config: bad value for key '" + key + "'");
  }
  try {
    it->second.set(*this, v);
  } catch (const json::exception&) {
    throw DataError("config: bad value for key '" + key + "'");
  }
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  json j;
  for (const auto& [key, field] : registry()) j[key] = field.get(*this);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write config: " + path.string());
  f << j.dump(2) << "\n";
}

}  // namespace pf

#pragma once

#include "poseforge/core.hpp"

#include <optional>

namespace pf::colorpair {

// Two representative CIELAB colors sampled across a texture edge.
// c1 sits on the negative side of the gradient direction, c2 on the positive.
struct ColorPair {
  Vec3 c1 = Vec3::Zero();
  Vec3 c2 = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();      // edge centerline location
  Vec2 direction = Vec2::UnitX(); // unit gradient direction
  double thickness = 1.0;         // pixels
};

inline ColorPair swap_colors(const ColorPair& p) {
  ColorPair out = p;
  std::swap(out.c1, out.c2);
  out.direction = -p.direction;
  return out;
}

struct GradientField {
  GrayImage magnitude;  // channel-weighted energy
  GrayImage direction;  // radians, from the strongest weighted channel
};

struct EdgeMap {
  MaskImage is_centerline;
  GrayImage magnitude;
  GrayImage direction;   // radians
  GrayImage thickness;   // pixels converged onto each centerline pixel, else 0
};

LabImage rgb_to_lab(const RgbImage& rgb);

// Stage 1: bilateral on all channels. Stage 2: joint bilateral on a*/b*
// guided by the stage-1 L* channel. Constant images are exact fixed points.
LabImage bilateral_prefilter(const LabImage& img, double spatial_sigma, double range_sigma);

// Magnitude aggregates weighted per-channel energy, L* scaled by
// lightness_weight; direction follows the strongest weighted channel.
GradientField unified_gradient(const LabImage& img, double lightness_weight = 0.3);

// NMS with thickness: above-threshold pixels walk uphill along their
// gradient axis until a ridge pixel; arrival counts become thickness.
EdgeMap edge_nms_thickness(const GradientField& grad, double mag_threshold);

struct SampleParams {
  double offset_factors[3] = {0.75, 1.0, 1.5};
  double thickness_cap = 8.0;
  double whitening_eps = 1e-3;
  double gate = 2.0;              // whitened units of perpendicular residual
  int min_inliers_per_side = 2;
};

std::vector<ColorPair> sample_color_pairs(const LabImage& img, const EdgeMap& edges,
                                          const MaskImage& mask,
                                          const SampleParams& params = {});

// Single-pixel variant used by the tracking filter; bounds-gated only.
std::optional<ColorPair> extract_pair_at(const LabImage& img, const EdgeMap& edges,
                                         int x, int y, const SampleParams& params = {});

// Product of directional alignment, internal contrast and relative
// luminance, maximized over the color-swapped counterpart of b.
double colorpair_similarity(const ColorPair& a, const ColorPair& b,
                            double lightness_weight = 0.3);

bool is_degenerate(const ColorPair& p, double eps = 1e-6);

struct ClassDb {
  struct ClassEntry {
    int id = 0;
    std::vector<ColorPair> prototypes;
  };
  std::vector<ClassEntry> classes;
  double similarity_threshold = 0.85;
  double lightness_weight = 0.3;

  size_t size() const { return classes.size(); }
};

// Greedy leader clustering; prototypes replaced by class medoids after one
// full pass. Deterministic given input order.
ClassDb build_class_db(const std::vector<ColorPair>& reference_pairs, double threshold = 0.85,
                       double lightness_weight = 0.3);

struct Classification {
  int class_id = -1;   // -1 = unclassified
  double weight = 0.0; // best similarity, 0 when unclassified
};

std::vector<Classification> classify_pairs(const std::vector<ColorPair>& pairs,
                                           const ClassDb& db);

// Full extraction pipeline: prefilter, gradient, NMS, sampling.
struct ExtractionParams {
  double bilateral_spatial_sigma = 1.5;
  double bilateral_range_sigma = 8.0;
  double lightness_weight = 0.3;
  double gradient_threshold = 3.0;
  SampleParams sample;
};

struct ExtractionResult {
  LabImage lab;  // prefiltered
  EdgeMap edges;
  std::vector<ColorPair> pairs;
};

ExtractionResult extract_color_pairs(const RgbImage& rgb, const MaskImage& mask,
                                     const ExtractionParams& params = {});

}  // namespace pf::colorpair

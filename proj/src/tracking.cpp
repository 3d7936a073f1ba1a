#include "poseforge/tracking.hpp"

#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pf::track {

namespace {

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage out(rgb.width(), rgb.height());
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) {
      const Rgb8& p = rgb.at(x, y);
      out.at(x, y) = 0.299f * p.r + 0.587f * p.g + 0.114f * p.b;
    }
  return out;
}

GrayImage downsample2(const GrayImage& img) {
  int w = std::max(1, img.width() / 2), h = std::max(1, img.height() / 2);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int x0 = 2 * x, y0 = 2 * y;
      int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
      out.at(x, y) =
          0.25f * (img.at(x0, y0) + img.at(x1, y0) + img.at(x0, y1) + img.at(x1, y1));
    }
  return out;
}

inline bool bilinear(const GrayImage& img, double x, double y, double* out) {
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  if (x0 < 0 || y0 < 0 || x0 + 1 >= img.width() || y0 + 1 >= img.height()) return false;
  double fx = x - x0, fy = y - y0;
  *out = (img.at(x0, y0) * (1 - fx) + img.at(x0 + 1, y0) * fx) * (1 - fy) +
         (img.at(x0, y0 + 1) * (1 - fx) + img.at(x0 + 1, y0 + 1) * fx) * fy;
  return true;
}

// Single-point iterative LK at one pyramid level; returns false on window
// exit or a degenerate structure tensor.
bool lk_at_level(const GrayImage& prev, const GrayImage& cur, const Vec2& p, Vec2& flow,
                 const FlowParams& params) {
  const int r = params.window_radius;
  Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
  std::vector<double> ix((2 * r + 1) * (2 * r + 1)), iy(ix.size()), iv(ix.size());
  int n = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      double xp = p.x() + dx, yp = p.y() + dy;
      double vxp, vxm, vyp, vym, v;
      if (!bilinear(prev, xp + 0.5, yp, &vxp) || !bilinear(prev, xp - 0.5, yp, &vxm) ||
          !bilinear(prev, xp, yp + 0.5, &vyp) || !bilinear(prev, xp, yp - 0.5, &vym) ||
          !bilinear(prev, xp, yp, &v))
        return false;
      double gx = vxp - vxm, gy = vyp - vym;
      ix[n] = gx;
      iy[n] = gy;
      iv[n] = v;
      g(0, 0) += gx * gx;
      g(0, 1) += gx * gy;
      g(1, 0) += gx * gy;
      g(1, 1) += gy * gy;
      ++n;
    }
  }
  double tr = g(0, 0) + g(1, 1);
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
  if (min_eig < params.min_eig * (2 * r + 1) * (2 * r + 1)) return false;

  Eigen::Matrix2d ginv = g.inverse();
  for (int it = 0; it < params.max_iters; ++it) {
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    int k = 0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx, ++k) {
        double v2;
        if (!bilinear(cur, p.x() + flow.x() + dx, p.y() + flow.y() + dy, &v2)) return false;
        double dt = v2 - iv[k];
        b.x() -= dt * ix[k];
        b.y() -= dt * iy[k];
      }
    }
    Eigen::Vector2d delta = ginv * b;
    flow += delta;
    if (delta.norm() < params.epsilon) break;
  }
  return true;
}

bool lk_track(const std::vector<GrayImage>& prev_pyr, const std::vector<GrayImage>& cur_pyr,
              const Vec2& seed, const FlowParams& params, Vec2* out) {
  const int levels = static_cast<int>(prev_pyr.size());
  Vec2 flow = Vec2::Zero();
  for (int l = levels - 1; l >= 0; --l) {
    double scale = std::pow(2.0, l);
    Vec2 p = seed / scale;
    flow *= 2.0;
    if (l == levels - 1) flow = Vec2::Zero();
    if (!lk_at_level(prev_pyr[l], cur_pyr[l], p, flow, params)) return false;
  }
  *out = seed + flow;
  return true;
}

std::vector<Vec2> flow_seeds(const RgbdFrame& prev, const MaskImage& mask,
                             const colorpair::EdgeMap& edges, const FlowParams& params) {
  std::vector<Vec2> seeds;
  for (int y = 0; y < prev.depth.height(); ++y)
    for (int x = 0; x < prev.depth.width(); ++x)
      if (edges.is_centerline.at(x, y) && mask.at(x, y) && prev.depth.at(x, y) != 0)
        seeds.emplace_back(x, y);
  if (static_cast<int>(seeds.size()) > params.max_seeds) {
    std::vector<Vec2> kept;
    double stride = static_cast<double>(seeds.size()) / params.max_seeds;
    for (int i = 0; i < params.max_seeds; ++i)
      kept.push_back(seeds[static_cast<size_t>(i * stride)]);
    seeds = std::move(kept);
  }
  return seeds;
}

colorpair::EdgeMap compute_edges(const RgbImage& rgb, const colorpair::ExtractionParams& p) {
  LabImage lab = colorpair::bilateral_prefilter(colorpair::rgb_to_lab(rgb),
                                                p.bilateral_spatial_sigma,
                                                p.bilateral_range_sigma);
  return colorpair::edge_nms_thickness(colorpair::unified_gradient(lab, p.lightness_weight),
                                       p.gradient_threshold);
}

}  // namespace

std::vector<FlowMatch> flow_correspondences(const RgbdFrame& prev, const RgbdFrame& cur,
                                            const MaskImage& mask, const FlowParams& params,
                                            const colorpair::EdgeMap* prev_edges) {
  if (prev.rgb.width() != cur.rgb.width() || prev.rgb.height() != cur.rgb.height())
    throw LengthMismatch("flow_correspondences: frame dimensions differ");

  colorpair::EdgeMap local_edges;
  if (!prev_edges) {
    local_edges = compute_edges(prev.rgb, {});
    prev_edges = &local_edges;
  }
  auto seeds = flow_seeds(prev, mask, *prev_edges, params);
  if (seeds.empty()) throw NoTrackablePoints("flow_correspondences: no seed points in mask");

  std::vector<GrayImage> prev_pyr{to_gray(prev.rgb)}, cur_pyr{to_gray(cur.rgb)};
  for (int l = 1; l < params.pyramid_levels; ++l) {
    prev_pyr.push_back(downsample2(prev_pyr.back()));
    cur_pyr.push_back(downsample2(cur_pyr.back()));
  }

  std::vector<FlowMatch> matches;
  for (const Vec2& seed : seeds) {
    Vec2 tracked;
    if (!lk_track(prev_pyr, cur_pyr, seed, params, &tracked)) continue;
    Vec2 back;
    if (!lk_track(cur_pyr, prev_pyr, tracked, params, &back)) continue;
    if ((back - seed).norm() >= params.fb_threshold) continue;
    matches.push_back({seed, tracked});
  }
  if (matches.empty()) throw NoTrackablePoints("flow_correspondences: every track failed");
  return matches;
}

std::vector<FlowMatch> flow_from_field(const RgbdFrame& prev, const FlowField& field,
                                       const MaskImage& mask, const FlowParams& params,
                                       const colorpair::EdgeMap* prev_edges) {
  if (!field.same_size(prev.rgb.width(), prev.rgb.height()))
    throw LengthMismatch("flow_from_field: field dimensions differ from frame");
  colorpair::EdgeMap local_edges;
  if (!prev_edges) {
    local_edges = compute_edges(prev.rgb, {});
    prev_edges = &local_edges;
  }
  auto seeds = flow_seeds(prev, mask, *prev_edges, params);
  if (seeds.empty()) throw NoTrackablePoints("flow_from_field: no seed points in mask");

  std::vector<FlowMatch> matches;
  for (const Vec2& seed : seeds) {
    const Eigen::Vector2f& f = field.at(static_cast<int>(seed.x()), static_cast<int>(seed.y()));
    matches.push_back({seed, seed + Vec2(f.x(), f.y())});
  }
  return matches;
}

namespace {

// Nearest centerline pixel within the search radius, or -1.
bool nearest_centerline(const colorpair::EdgeMap& edges, const Vec2& px, double radius, int* ox,
                        int* oy) {
  int cx = static_cast<int>(std::lround(px.x()));
  int cy = static_cast<int>(std::lround(px.y()));
  int r = static_cast<int>(std::ceil(radius));
  double best = radius * radius + 1e-9;
  bool found = false;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      int x = cx + dx, y = cy + dy;
      if (!edges.is_centerline.in_bounds(x, y) || !edges.is_centerline.at(x, y)) continue;
      double d2 = (Vec2(x, y) - px).squaredNorm();
      if (d2 < best) {
        best = d2;
        *ox = x;
        *oy = y;
        found = true;
      }
    }
  }
  return found;
}

}  // namespace

FilteredMatches filter_by_colorpair(const std::vector<FlowMatch>& matches,
                                    const LabImage& prev_lab, const LabImage& cur_lab,
                                    const colorpair::EdgeMap& prev_edges,
                                    const colorpair::EdgeMap& cur_edges,
                                    const FilterParams& params) {
  FilteredMatches out;
  auto keep = [&](size_t i, double sim) {
    out.matches.push_back(matches[i]);
    out.similarities.push_back(sim);
    out.indices.push_back(static_cast<int>(i));
  };
  for (size_t i = 0; i < matches.size(); ++i) {
    const auto& m = matches[i];
    int px, py, cx, cy;
    bool has_prev = nearest_centerline(prev_edges, m.prev_px, params.search_radius_px, &px, &py);
    bool has_cur = nearest_centerline(cur_edges, m.cur_px, params.search_radius_px, &cx, &cy);
    if (!has_prev || !has_cur) {
      if (!params.require_edges) keep(i, 1.0);
      continue;
    }
    auto pair_prev = colorpair::extract_pair_at(prev_lab, prev_edges, px, py, params.sample);
    auto pair_cur = colorpair::extract_pair_at(cur_lab, cur_edges, cx, cy, params.sample);
    if (!pair_prev || !pair_cur) {
      if (!params.require_edges) keep(i, 1.0);
      continue;
    }
    double sim = 0.0;
    try {
      sim = colorpair::colorpair_similarity(*pair_prev, *pair_cur, params.lightness_weight);
    } catch (const DegeneratePair&) {
      continue;
    }
    if (sim >= params.threshold) keep(i, sim);
  }
  return out;
}

std::pair<PointCloud, CanonicalFrame> perspective_normalize(const PointCloud& cloud,
                                                            const Vec3& t_est, const Vec3& u) {
  double tn = t_est.norm();
  if (tn <= 0) throw DataError("perspective_normalize: t_est must be nonzero");
  Vec3 z = t_est / tn;
  Vec3 xu = u.cross(z);
  double xn = xu.norm();
  if (xn < 1e-9) throw DegenerateUpVector("perspective_normalize: up vector parallel to t_est");
  Vec3 x = xu / xn;
  Vec3 y = z.cross(x);

  CanonicalFrame frame;
  frame.r_p.col(0) = x;
  frame.r_p.col(1) = y;
  frame.r_p.col(2) = z;
  frame.t_est = t_est;
  frame.up = u;

  PointCloud out;
  out.points.reserve(cloud.size());
  Mat3 rt = frame.r_p.transpose();
  for (const auto& p : cloud.points) out.points.push_back(rt * (p - t_est));
  for (const auto& n : cloud.normals) out.normals.push_back(rt * n);
  out.colors = cloud.colors;
  return {out, frame};
}

std::vector<MotionFeature> build_motion_features(const PointCloud& p1, const PointCloud& p2,
                                                 const CanonicalFrame& frame) {
  if (p1.size() != p2.size())
    throw LengthMismatch("build_motion_features: cloud sizes differ");
  const double dist = frame.t_est.norm();
  auto project_normalized = [&](const Vec3& p) -> Vec2 {
    double z = std::max(p.z() + dist, 1e-6);
    return {p.x() / z, p.y() / z};
  };

  std::vector<MotionFeature> out(p1.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    const Vec3 &a = p1.points[i], &b = p2.points[i];
    Vec2 pa = project_normalized(a), pb = project_normalized(b);
    MotionFeature& f = out[i];
    f.v[0] = a.x(); f.v[1] = a.y(); f.v[2] = a.z();
    f.v[3] = b.x(); f.v[4] = b.y(); f.v[5] = b.z();
    f.v[6] = pa.x(); f.v[7] = pa.y();
    f.v[8] = pb.x(); f.v[9] = pb.y();
    f.v[10] = b.x() - a.x(); f.v[11] = b.y() - a.y(); f.v[12] = b.z() - a.z();
    f.v[13] = pb.x() - pa.x(); f.v[14] = pb.y() - pa.y();
  }
  return out;
}

namespace {

RotationEstimator g_rotation_estimator = nullptr;

Mat3 rotation_kabsch(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                     const std::vector<double>& w) {
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  double wsum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ca += w[i] * a[i];
    cb += w[i] * b[i];
    wsum += w[i];
  }
  if (wsum <= 0) throw DegenerateConfiguration("rotation estimate: zero total weight");
  ca /= wsum;
  cb /= wsum;
  Mat3 h = Mat3::Zero();
  for (size_t i = 0; i < a.size(); ++i)
    h += w[i] * (a[i] - ca) * (b[i] - cb).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  if (sv(1) < 1e-12)
    throw DegenerateConfiguration("rotation estimate: degenerate point configuration");
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  return svd.matrixV() * d * svd.matrixU().transpose();
}

double median_of(std::vector<double> v) {
  size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void register_rotation_estimator(RotationEstimator estimator) {
  g_rotation_estimator = estimator;
}
void clear_rotation_estimator() { g_rotation_estimator = nullptr; }

Mat3 estimate_relative_rotation(const PointCloud& p1, const PointCloud& p2,
                                const std::vector<double>& weights) {
  if (p1.size() != p2.size())
    throw LengthMismatch("estimate_relative_rotation: cloud sizes differ");
  if (p1.size() < 3)
    throw DegenerateConfiguration("estimate_relative_rotation: need at least 3 pairs");

  if (g_rotation_estimator) {
    CanonicalFrame unit;
    unit.t_est = Vec3(0, 0, 1);
    return g_rotation_estimator(build_motion_features(p1, p2, unit));
  }

  std::vector<double> w = weights;
  if (w.empty()) w.assign(p1.size(), 1.0);
  if (w.size() != p1.size())
    throw LengthMismatch("estimate_relative_rotation: weight count differs");

  Mat3 r = rotation_kabsch(p1.points, p2.points, w);

  // two rounds of MAD-based outlier down-weighting
  for (int round = 0; round < 2; ++round) {
    Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
    double wsum = 0.0;
    for (size_t i = 0; i < p1.size(); ++i) {
      ca += w[i] * p1.points[i];
      cb += w[i] * p2.points[i];
      wsum += w[i];
    }
    ca /= wsum;
    cb /= wsum;
    std::vector<double> res(p1.size());
    for (size_t i = 0; i < p1.size(); ++i)
      res[i] = (r * (p1.points[i] - ca) - (p2.points[i] - cb)).norm();
    double med = median_of(res);
    std::vector<double> dev(res.size());
    for (size_t i = 0; i < res.size(); ++i) dev[i] = std::abs(res[i] - med);
    double mad = median_of(dev);
    double gate = med + 3.0 * 1.4826 * mad + 1e-9;
    std::vector<double> w2 = w;
    int kept = 0;
    for (size_t i = 0; i < res.size(); ++i) {
      if (res[i] > gate) w2[i] = 0.0;
      else ++kept;
    }
    if (kept < 3) break;
    w = std::move(w2);
    r = rotation_kabsch(p1.points, p2.points, w);
  }
  return r;
}

Mat3 camera_rotation_from_canonical(const Mat3& canonical_rotation, const CanonicalFrame& f1,
                                    const CanonicalFrame& f2) {
  return f2.r_p * canonical_rotation * f1.r_p.transpose();
}

Vec3 estimate_relative_translation(const Mat3& rotation, const PointCloud& p1_cam,
                                   const PointCloud& p2_cam,
                                   const std::vector<double>& weights) {
  if (p1_cam.size() != p2_cam.size())
    throw LengthMismatch("estimate_relative_translation: cloud sizes differ");
  if (p1_cam.size() == 0)
    throw LengthMismatch("estimate_relative_translation: empty clouds");
  std::vector<double> w = weights;
  if (w.empty()) w.assign(p1_cam.size(), 1.0);

  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    std::vector<std::pair<double, double>> vals;  // (value, weight)
    double wsum = 0.0;
    for (size_t i = 0; i < p1_cam.size(); ++i) {
      if (w[i] <= 0) continue;
      Vec3 d = p2_cam.points[i] - rotation * p1_cam.points[i];
      vals.emplace_back(d[c], w[i]);
      wsum += w[i];
    }
    if (vals.empty()) throw LengthMismatch("estimate_relative_translation: no weighted pairs");
    std::sort(vals.begin(), vals.end());
    double acc = 0.0;
    double result = vals.back().first;
    for (const auto& [value, weight] : vals) {
      acc += weight;
      if (acc >= 0.5 * wsum) {
        result = value;
        break;
      }
    }
    out[c] = result;
  }
  return out;
}

TrainingPairParams::TrainingPairParams() : intrinsics(synth::default_intrinsics()) {}

TrainingPairStream::TrainingPairStream(uint64_t seed, const TrainingPairParams& params)
    : seed_(seed), params_(params) {}

TrainingPair TrainingPairStream::next() {
  uint64_t item_seed = seed_ * 0x100000001b3ull + item_;
  ++item_;
  Rng rng(item_seed);

  synth::ShapeParams shape_params;
  shape_params.min_classes = params_.min_classes;
  synth::TexturedMesh mesh = synth::generate_shape(rng.next(), shape_params);

  Se3Pose pose1;
  pose1.rotation = rng.random_rotation();
  pose1.translation = Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                           rng.uniform(0.4, 0.5));

  Se3Pose delta;
  double angle = rng.uniform(0.0, params_.max_rot);
  if (angle > 1e-12) delta.rotation = Eigen::AngleAxisd(angle, rng.unit_vector()).toRotationMatrix();
  delta.translation = rng.unit_vector() * rng.uniform(0.0, params_.max_trans);

  Se3Pose pose2;
  pose2.rotation = delta.rotation * pose1.rotation;
  pose2.translation = pose1.translation + delta.translation;

  const CameraIntrinsics& k = params_.intrinsics;
  RgbdFrame f1 = synth::render_rgbd(mesh, pose1, k);
  RgbdFrame f2 = synth::render_rgbd(mesh, pose2, k);
  Se3Pose relative = se3_compose(pose2, pose1.inverse());

  TrainingPair out;
  out.relative = relative;

  std::vector<std::pair<int, int>> candidates;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
      if (f1.mask.at(x, y) && f1.depth.at(x, y) != 0) candidates.emplace_back(x, y);
  double stride = std::max(1.0, static_cast<double>(candidates.size()) /
                                    std::max(1, params_.max_pairs_per_item));

  for (double pos = 0; pos < candidates.size(); pos += stride) {
    auto [x, y] = candidates[static_cast<size_t>(pos)];
    double d1 = f1.depth.at(x, y) * 1e-3;
    Vec3 p1 = lift(x, y, d1, k);
    Vec3 q = relative.apply(p1);  // expected camera-2 point
    Vec2 px2;
    try {
      px2 = project(q, k);
    } catch (const NonPositiveDepth&) {
      continue;
    }
    int ix = static_cast<int>(std::lround(px2.x())), iy = static_cast<int>(std::lround(px2.y()));
    if (!f2.depth.in_bounds(ix, iy) || f2.depth.at(ix, iy) == 0) continue;
    // ground-truth visibility: the rendered depth must agree
    if (std::abs(f2.depth.at(ix, iy) * 1e-3 - q.z()) > 0.004) continue;
    if (params_.dropout_prob > 0 &&
        (rng.uniform() < params_.dropout_prob || rng.uniform() < params_.dropout_prob))
      continue;
    double n1 = rng.normal() * params_.depth_noise_mm * 1e-3;
    double n2 = rng.normal() * params_.depth_noise_mm * 1e-3;
    out.cloud1.points.push_back(p1 * ((d1 + n1) / d1));
    out.cloud2.points.push_back(q * ((q.z() + n2) / q.z()));
  }
  return out;
}

TrackState make_track_state(const Se3Pose& pose, const RgbdFrame& frame,
                            const reg::ClassifiedCloud& model, const TrackParams& params) {
  TrackState state;
  state.pose = pose;
  state.prev_frame = frame;
  state.prev_mask = frame.mask;
  state.model = model;
  state.frame_index = 0;
  state.prev_lab = colorpair::bilateral_prefilter(colorpair::rgb_to_lab(frame.rgb),
                                                  params.extraction.bilateral_spatial_sigma,
                                                  params.extraction.bilateral_range_sigma);
  state.prev_edges = colorpair::edge_nms_thickness(
      colorpair::unified_gradient(state.prev_lab, params.extraction.lightness_weight),
      params.extraction.gradient_threshold);
  return state;
}

namespace {

// Depth lookup tolerant to sub-pixel positions: nearest pixel first, then a
// small neighborhood of valid depths.
bool depth_at(const DepthImage& depth, const Vec2& px, double* out) {
  int x = static_cast<int>(std::lround(px.x())), y = static_cast<int>(std::lround(px.y()));
  if (!depth.in_bounds(x, y)) return false;
  if (depth.at(x, y) != 0) {
    *out = depth.at(x, y) * 1e-3;
    return true;
  }
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      int xx = x + dx, yy = y + dy;
      if (depth.in_bounds(xx, yy) && depth.at(xx, yy) != 0) {
        *out = depth.at(xx, yy) * 1e-3;
        return true;
      }
    }
  return false;
}

MaskImage shift_mask(const MaskImage& mask, const Vec2& flow) {
  MaskImage out(mask.width(), mask.height(), 0);
  int sx = static_cast<int>(std::lround(flow.x()));
  int sy = static_cast<int>(std::lround(flow.y()));
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      int nx = x + sx, ny = y + sy;
      if (out.in_bounds(nx, ny)) out.at(nx, ny) = 255;
    }
  return out;
}

}  // namespace

TrackStepResult track_step(const TrackState& state, const RgbdFrame& frame,
                           const TrackParams& params) {
  frame.validate();
  if (frame.rgb.width() != state.prev_frame.rgb.width() ||
      frame.rgb.height() != state.prev_frame.rgb.height())
    throw LengthMismatch("track_step: frame dimensions changed");

  std::vector<FlowMatch> matches;
  try {
    matches = flow_correspondences(state.prev_frame, frame, state.prev_mask, params.flow,
                                   &state.prev_edges);
  } catch (const NoTrackablePoints&) {
    throw TrackingLost("track_step: no trackable points");
  }

  LabImage cur_lab = colorpair::bilateral_prefilter(colorpair::rgb_to_lab(frame.rgb),
                                                    params.extraction.bilateral_spatial_sigma,
                                                    params.extraction.bilateral_range_sigma);
  colorpair::EdgeMap cur_edges = colorpair::edge_nms_thickness(
      colorpair::unified_gradient(cur_lab, params.extraction.lightness_weight),
      params.extraction.gradient_threshold);

  FilteredMatches filtered = filter_by_colorpair(matches, state.prev_lab, cur_lab,
                                                 state.prev_edges, cur_edges, params.filter);
  if (static_cast<int>(filtered.matches.size()) < params.min_matches)
    throw TrackingLost("track_step: too few filtered correspondences");

  // lift both endpoints
  PointCloud c1, c2;
  std::vector<double> weights;
  Vec2 flow_sum = Vec2::Zero();
  for (size_t i = 0; i < filtered.matches.size(); ++i) {
    const auto& m = filtered.matches[i];
    double d1, d2;
    if (!depth_at(state.prev_frame.depth, m.prev_px, &d1) || !depth_at(frame.depth, m.cur_px, &d2))
      continue;
    c1.points.push_back(lift(m.prev_px.x(), m.prev_px.y(), d1, frame.intrinsics));
    c2.points.push_back(lift(m.cur_px.x(), m.cur_px.y(), d2, frame.intrinsics));
    weights.push_back(filtered.similarities[i]);
    flow_sum += m.cur_px - m.prev_px;
  }
  if (static_cast<int>(c1.size()) < params.min_matches)
    throw TrackingLost("track_step: too few lifted correspondences");
  Vec2 median_flow = flow_sum / static_cast<double>(c1.size());

  auto [n1, f1] = perspective_normalize(c1, c1.centroid());
  auto [n2, f2] = perspective_normalize(c2, c2.centroid());

  Mat3 canonical = estimate_relative_rotation(n1, n2, weights);
  Mat3 r_rel = camera_rotation_from_canonical(canonical, f1, f2);
  Vec3 t_rel = estimate_relative_translation(r_rel, c1, c2, weights);

  Se3Pose relative{orthonormalize(r_rel), t_rel};
  Se3Pose raw_pose = se3_compose(relative, state.pose);

  // polish against the model and the current depth
  PointCloud scene;
  {
    std::vector<std::pair<int, int>> px;
    for (int y = 0; y < frame.depth.height(); ++y)
      for (int x = 0; x < frame.depth.width(); ++x)
        if (frame.mask.at(x, y) && frame.depth.at(x, y) != 0) px.emplace_back(x, y);
    double stride = std::max(1.0, static_cast<double>(px.size()) / params.icp_scene_max);
    for (double pos = 0; pos < px.size(); pos += stride) {
      auto [x, y] = px[static_cast<size_t>(pos)];
      scene.points.push_back(lift(x, y, frame.depth.at(x, y) * 1e-3, frame.intrinsics));
    }
  }
  PointCloud model_pc;
  model_pc.points = state.model.points;
  model_pc.normals = state.model.normals;

  Se3Pose polished = raw_pose;
  if (!scene.points.empty() && model_pc.has_normals()) {
    try {
      polished = refine::point_to_plane_icp(scene, model_pc, raw_pose, params.icp_fixed_iters,
                                            params.icp);
    } catch (const NoCorrespondences&) {
      polished = raw_pose;  // keep the raw estimate when depth support is thin
    }
  }

  TrackStepResult result;
  result.pose = polished;
  result.used_matches = static_cast<int>(c1.size());
  result.state.pose = polished;
  result.state.prev_frame = frame;
  result.state.model = state.model;
  result.state.frame_index = state.frame_index + 1;
  result.state.prev_lab = std::move(cur_lab);
  result.state.prev_edges = std::move(cur_edges);

  bool mask_present = false;
  for (uint8_t m : frame.mask.data())
    if (m) {
      mask_present = true;
      break;
    }
  result.state.prev_mask = mask_present ? frame.mask : shift_mask(state.prev_mask, median_flow);
  return result;
}

}  // namespace pf::track

#include "poseforge/colorpair.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <array>
#include <cmath>

namespace pf::colorpair {

namespace {

double srgb_to_linear(uint8_t v) {
  double c = v / 255.0;
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  constexpr double d3 = delta * delta * delta;
  return t > d3 ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

}  // namespace

LabImage rgb_to_lab(const RgbImage& rgb) {
  LabImage out(rgb.width(), rgb.height());
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const Rgb8& px = rgb.at(x, y);
      double r = srgb_to_linear(px.r), g = srgb_to_linear(px.g), b = srgb_to_linear(px.b);
      // sRGB D65
      double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
      double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
      double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
      double fx = lab_f(X / 0.95047), fy = lab_f(Y), fz = lab_f(Z / 1.08883);
      out.at(x, y) = Eigen::Vector3f(static_cast<float>(116.0 * fy - 16.0),
                                     static_cast<float>(500.0 * (fx - fy)),
                                     static_cast<float>(200.0 * (fy - fz)));
    }
  }
  return out;
}

LabImage bilateral_prefilter(const LabImage& img, double spatial_sigma, double range_sigma) {
  if (spatial_sigma <= 0 || range_sigma <= 0)
    throw DataError("bilateral_prefilter: sigmas must be positive");
  const int w = img.width(), h = img.height();
  const int radius = std::min(6, std::max(1, static_cast<int>(std::ceil(2.0 * spatial_sigma))));
  const double inv2ss = 1.0 / (2.0 * spatial_sigma * spatial_sigma);
  const double inv2rs = 1.0 / (2.0 * range_sigma * range_sigma);

  std::vector<double> spatial((2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      spatial[(dy + radius) * (2 * radius + 1) + (dx + radius)] =
          std::exp(-(dx * dx + dy * dy) * inv2ss);

  // Accumulating neighbor differences keeps constant regions bit-identical.
  LabImage stage1(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3f c = img.at(x, y);
      Eigen::Vector3d num = Eigen::Vector3d::Zero();
      double den = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          Eigen::Vector3f diff = img.at(xx, yy) - c;
          double wgt = spatial[(dy + radius) * (2 * radius + 1) + (dx + radius)] *
                       std::exp(-static_cast<double>(diff.squaredNorm()) * inv2rs);
          num += wgt * diff.cast<double>();
          den += wgt;
        }
      }
      stage1.at(x, y) = c + (num / den).cast<float>();
    }
  }

  // Stage 2: chroma smoothed with weights from the stage-1 luminance.
  LabImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3f c = stage1.at(x, y);
      Eigen::Vector2d num = Eigen::Vector2d::Zero();
      double den = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const Eigen::Vector3f& q = stage1.at(xx, yy);
          double dl = q.x() - c.x();
          double wgt = spatial[(dy + radius) * (2 * radius + 1) + (dx + radius)] *
                       std::exp(-dl * dl * inv2rs);
          num.x() += wgt * (q.y() - c.y());
          num.y() += wgt * (q.z() - c.z());
          den += wgt;
        }
      }
      out.at(x, y) = Eigen::Vector3f(c.x(), c.y() + static_cast<float>(num.x() / den),
                                     c.z() + static_cast<float>(num.y() / den));
    }
  }
  return out;
}

GradientField unified_gradient(const LabImage& img, double lightness_weight) {
  const int w = img.width(), h = img.height();
  GradientField out{GrayImage(w, h, 0.0f), GrayImage(w, h, 0.0f)};
  if (w < 2 || h < 2) return out;

  auto clampx = [&](int x) { return std::clamp(x, 0, w - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, h - 1); };
  const double weights[3] = {lightness_weight, 1.0, 1.0};

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best_mag = -1.0;
      double best_dir = 0.0;
      double energy = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        // Scharr 3/10/3, normalized to units per pixel
        double gx = 0.0, gy = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          double row_w = dy == 0 ? 10.0 : 3.0;
          double vplus = img.at(clampx(x + 1), clampy(y + dy))[ch];
          double vminus = img.at(clampx(x - 1), clampy(y + dy))[ch];
          gx += row_w * (vplus - vminus);
          double hplus = img.at(clampx(x + dy), clampy(y + 1))[ch];
          double hminus = img.at(clampx(x + dy), clampy(y - 1))[ch];
          gy += row_w * (hplus - hminus);
        }
        gx /= 32.0;
        gy /= 32.0;
        double m = weights[ch] * std::hypot(gx, gy);
        energy += m * m;
        if (m > best_mag) {
          best_mag = m;
          best_dir = std::atan2(gy, gx);
        }
      }
      out.magnitude.at(x, y) = static_cast<float>(std::sqrt(energy));
      out.direction.at(x, y) = static_cast<float>(best_dir);
    }
  }
  return out;
}

namespace {

// Strict total order over pixels: magnitude first, linear index breaks ties.
inline bool key_less(float ma, int ia, float mb, int ib) {
  if (ma != mb) return ma < mb;
  return ia < ib;
}

}  // namespace

EdgeMap edge_nms_thickness(const GradientField& grad, double mag_threshold) {
  if (mag_threshold <= 0) throw DataError("edge_nms_thickness: threshold must be positive");
  const int w = grad.magnitude.width(), h = grad.magnitude.height();
  EdgeMap out{MaskImage(w, h, 0), grad.magnitude, grad.direction, GrayImage(w, h, 0.0f)};

  const float thr = static_cast<float>(mag_threshold);
  std::vector<int> parent(static_cast<size_t>(w) * h, -1);

  auto uphill = [&](int x, int y) -> int {
    int idx = y * w + x;
    float m = grad.magnitude.at(x, y);
    float d = grad.direction.at(x, y);
    int dx = static_cast<int>(std::lround(std::cos(d)));
    int dy = static_cast<int>(std::lround(std::sin(d)));
    if (dx == 0 && dy == 0) return idx;
    int best = idx;
    float best_m = m;
    for (int s = -1; s <= 1; s += 2) {
      int xx = x + s * dx, yy = y + s * dy;
      if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
      float mn = grad.magnitude.at(xx, yy);
      if (mn < thr) continue;
      int in = yy * w + xx;
      if (key_less(best_m, best, mn, in)) {
        best = in;
        best_m = mn;
      }
    }
    return best;
  };

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (grad.magnitude.at(x, y) >= thr) parent[y * w + x] = uphill(x, y);

  // Root lookup with path compression; parent chains strictly ascend the
  // (magnitude, index) order so they terminate.
  std::vector<int> root(parent.size(), -1);
  auto find_root = [&](int idx) {
    int cur = idx;
    while (parent[cur] != cur) cur = parent[cur];
    int r = cur;
    cur = idx;
    while (parent[cur] != cur) {
      int nxt = parent[cur];
      root[cur] = r;
      cur = nxt;
    }
    root[r] = r;
    return r;
  };

  for (int idx = 0; idx < w * h; ++idx) {
    if (parent[idx] < 0) continue;
    int r = find_root(idx);
    out.thickness.data()[r] += 1.0f;
  }
  for (int idx = 0; idx < w * h; ++idx)
    if (parent[idx] == idx) out.is_centerline.data()[idx] = 255;

  // Demote the weaker of any centerline pair adjacent along the gradient
  // axis, folding its count into the survivor.
  for (int pass = 0; pass < 4; ++pass) {
    bool changed = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int idx = y * w + x;
        if (!out.is_centerline.data()[idx]) continue;
        float d = grad.direction.at(x, y);
        int dx = static_cast<int>(std::lround(std::cos(d)));
        int dy = static_cast<int>(std::lround(std::sin(d)));
        if (dx == 0 && dy == 0) continue;
        for (int s = -1; s <= 1; s += 2) {
          int xx = x + s * dx, yy = y + s * dy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          int in = yy * w + xx;
          if (!out.is_centerline.data()[in]) continue;
          if (key_less(grad.magnitude.at(x, y), idx, grad.magnitude.at(xx, yy), in)) {
            out.is_centerline.data()[idx] = 0;
            out.thickness.data()[in] += out.thickness.data()[idx];
            out.thickness.data()[idx] = 0.0f;
            changed = true;
            break;
          }
        }
      }
    }
    if (!changed) break;
  }
  return out;
}

namespace {

bool sample_bilinear(const LabImage& img, const MaskImage* mask, double x, double y,
                     Eigen::Vector3d* out) {
  int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  int x1 = x0 + 1, y1 = y0 + 1;
  if (x0 < 0 || y0 < 0 || x1 >= img.width() || y1 >= img.height()) return false;
  if (mask) {
    if (!mask->at(x0, y0) || !mask->at(x1, y0) || !mask->at(x0, y1) || !mask->at(x1, y1))
      return false;
  }
  double fx = x - x0, fy = y - y0;
  Eigen::Vector3d v00 = img.at(x0, y0).cast<double>(), v10 = img.at(x1, y0).cast<double>();
  Eigen::Vector3d v01 = img.at(x0, y1).cast<double>(), v11 = img.at(x1, y1).cast<double>();
  *out = (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
  return true;
}

Eigen::Vector3d component_median(std::vector<Eigen::Vector3d> v) {
  Eigen::Vector3d out;
  const size_t n = v.size();
  for (int c = 0; c < 3; ++c) {
    std::vector<double> vals(n);
    for (size_t i = 0; i < n; ++i) vals[i] = v[i][c];
    std::sort(vals.begin(), vals.end());
    out[c] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
  }
  return out;
}

std::optional<ColorPair> build_pair(const LabImage& img, const EdgeMap& edges,
                                    const MaskImage* mask, int x, int y,
                                    const SampleParams& params) {
  const double thickness = edges.thickness.at(x, y);
  const double t = std::clamp(thickness, 1.0, params.thickness_cap);
  const double dir = edges.direction.at(x, y);
  const Vec2 d(std::cos(dir), std::sin(dir));
  const Vec2 tangent(-d.y(), d.x());
  const Vec2 p(x, y);

  // 5 candidates per side: three thickness-scaled offsets plus two
  // tangent-jittered samples at the middle offset.
  std::vector<Vec2> offsets;
  for (double f : params.offset_factors) offsets.push_back(d * std::max(f * t, 1.0));
  double mid = std::max(params.offset_factors[1] * t, 1.0);
  offsets.push_back(d * mid + tangent);
  offsets.push_back(d * mid - tangent);

  std::vector<Eigen::Vector3d> side1, side2;  // negative / positive direction
  for (const Vec2& off : offsets) {
    Eigen::Vector3d c;
    if (sample_bilinear(img, mask, p.x() - off.x(), p.y() - off.y(), &c)) side1.push_back(c);
    if (sample_bilinear(img, mask, p.x() + off.x(), p.y() + off.y(), &c)) side2.push_back(c);
  }
  if (static_cast<int>(side1.size()) < params.min_inliers_per_side ||
      static_cast<int>(side2.size()) < params.min_inliers_per_side)
    return std::nullopt;

  // Whiten all candidates, gate against the transition axis.
  std::vector<Eigen::Vector3d> all;
  all.insert(all.end(), side1.begin(), side1.end());
  all.insert(all.end(), side2.begin(), side2.end());
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& c : all) mean += c;
  mean /= static_cast<double>(all.size());
  Eigen::Vector3d var = Eigen::Vector3d::Zero();
  for (const auto& c : all) var += (c - mean).cwiseAbs2();
  var /= static_cast<double>(all.size());
  Eigen::Vector3d scale = var.cwiseSqrt() + Eigen::Vector3d::Constant(params.whitening_eps);

  auto whiten = [&](const Eigen::Vector3d& c) -> Eigen::Vector3d {
    return (c - mean).cwiseQuotient(scale);
  };

  std::vector<Eigen::Vector3d> w1, w2;
  for (const auto& c : side1) w1.push_back(whiten(c));
  for (const auto& c : side2) w2.push_back(whiten(c));
  Eigen::Vector3d c1w = component_median(w1), c2w = component_median(w2);
  Eigen::Vector3d axis = c2w - c1w;

  std::vector<Eigen::Vector3d> in1, in2;
  if (axis.norm() < 1e-9) {
    in1 = side1;
    in2 = side2;
  } else {
    Eigen::Vector3d ahat = axis.normalized();
    Eigen::Vector3d midpt = 0.5 * (c1w + c2w);
    auto gate = [&](const Eigen::Vector3d& wc) {
      Eigen::Vector3d rel = wc - midpt;
      return (rel - rel.dot(ahat) * ahat).norm() <= params.gate;
    };
    for (size_t i = 0; i < w1.size(); ++i)
      if (gate(w1[i])) in1.push_back(side1[i]);
    for (size_t i = 0; i < w2.size(); ++i)
      if (gate(w2[i])) in2.push_back(side2[i]);
  }
  if (static_cast<int>(in1.size()) < params.min_inliers_per_side ||
      static_cast<int>(in2.size()) < params.min_inliers_per_side)
    return std::nullopt;

  ColorPair pair;
  pair.c1 = component_median(in1);
  pair.c2 = component_median(in2);
  pair.pixel = p;
  pair.direction = d;
  pair.thickness = std::max(thickness, 1.0);
  return pair;
}

}  // namespace

std::vector<ColorPair> sample_color_pairs(const LabImage& img, const EdgeMap& edges,
                                          const MaskImage& mask, const SampleParams& params) {
  std::vector<ColorPair> pairs;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!edges.is_centerline.at(x, y) || !mask.at(x, y)) continue;
      if (auto p = build_pair(img, edges, &mask, x, y, params)) pairs.push_back(*p);
    }
  }
  return pairs;
}

std::optional<ColorPair> extract_pair_at(const LabImage& img, const EdgeMap& edges, int x, int y,
                                         const SampleParams& params) {
  if (!img.in_bounds(x, y) || !edges.is_centerline.at(x, y)) return std::nullopt;
  return build_pair(img, edges, nullptr, x, y, params);
}

bool is_degenerate(const ColorPair& p, double eps) {
  return p.c1.norm() < eps || p.c2.norm() < eps;
}

namespace {

inline Eigen::Vector3d weighted(const Vec3& v, double wl) {
  return {wl * v.x(), v.y(), v.z()};
}

inline double clamped_cos(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), 0.0, 1.0);
}

// Luminance ratio after ordering each pair canonically, so the factor is
// exactly swap-invariant.
inline double luminance_ratio(const Vec3& c1, const Vec3& c2) {
  constexpr double eps = 1.0;
  bool c1_low = std::lexicographical_compare(c1.data(), c1.data() + 3, c2.data(), c2.data() + 3);
  const Vec3& lo = c1_low ? c1 : c2;
  const Vec3& hi = c1_low ? c2 : c1;
  return (lo.x() + eps) / (hi.x() + eps);
}

double factor_product(const ColorPair& a, const ColorPair& b, double wl) {
  // D1: alignment of the origin-to-color sides
  double d1 = clamped_cos(weighted(a.c1, wl), weighted(b.c1, wl)) *
              clamped_cos(weighted(a.c2, wl), weighted(b.c2, wl));
  // D2: alignment of the internal contrast vectors
  Eigen::Vector3d da = weighted(a.c2, wl) - weighted(a.c1, wl);
  Eigen::Vector3d db = weighted(b.c2, wl) - weighted(b.c1, wl);
  double d2;
  if (da.norm() < 1e-12 && db.norm() < 1e-12)
    d2 = 1.0;
  else
    d2 = clamped_cos(da, db);
  // D3: relative luminance ratio
  double ra = luminance_ratio(a.c1, a.c2);
  double rb = luminance_ratio(b.c1, b.c2);
  double d3 = std::min(ra, rb) / std::max(ra, rb);
  return d1 * d2 * d3;
}

}  // namespace

double colorpair_similarity(const ColorPair& a, const ColorPair& b, double lightness_weight) {
  if (is_degenerate(a) || is_degenerate(b))
    throw DegeneratePair("colorpair_similarity: color coincides with the origin");
  return std::max(factor_product(a, b, lightness_weight),
                  factor_product(a, swap_colors(b), lightness_weight));
}

ClassDb build_class_db(const std::vector<ColorPair>& reference_pairs, double threshold,
                       double lightness_weight) {
  std::vector<ColorPair> pairs;
  for (const auto& p : reference_pairs)
    if (!is_degenerate(p)) pairs.push_back(p);
  if (pairs.empty()) throw DataError("build_class_db: no usable reference pairs");

  ClassDb db;
  db.similarity_threshold = threshold;
  db.lightness_weight = lightness_weight;

  // Greedy leader pass: join the first class whose founder matches.
  std::vector<std::vector<int>> members;
  std::vector<ColorPair> founders;
  for (size_t i = 0; i < pairs.size(); ++i) {
    int assigned = -1;
    for (size_t c = 0; c < founders.size(); ++c) {
      if (colorpair_similarity(pairs[i], founders[c], lightness_weight) >= threshold) {
        assigned = static_cast<int>(c);
        break;
      }
    }
    if (assigned < 0) {
      assigned = static_cast<int>(founders.size());
      founders.push_back(pairs[i]);
      members.emplace_back();
    }
    members[assigned].push_back(static_cast<int>(i));
  }

  // One medoid refinement pass per class.
  std::vector<ColorPair> medoids;
  for (size_t c = 0; c < members.size(); ++c) {
    const auto& idx = members[c];
    int best = idx[0];
    double best_total = -1.0;
    for (int i : idx) {
      double total = 0.0;
      for (int j : idx)
        if (j != i) total += colorpair_similarity(pairs[i], pairs[j], lightness_weight);
      if (total > best_total) {
        best_total = total;
        best = i;
      }
    }
    medoids.push_back(pairs[best]);
  }

  // Greedy founders drift apart under shading variation, so classes whose
  // medoids still match are the same physical edge; merge them and keep all
  // constituent medoids as prototypes.
  std::vector<int> root(medoids.size());
  for (size_t i = 0; i < root.size(); ++i) root[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) { return root[x] == x ? x : root[x] = find(root[x]); };
  for (size_t i = 0; i < medoids.size(); ++i)
    for (size_t j = i + 1; j < medoids.size(); ++j)
      if (colorpair_similarity(medoids[i], medoids[j], lightness_weight) >= threshold) {
        int ri = find(static_cast<int>(i)), rj = find(static_cast<int>(j));
        if (ri != rj) root[std::max(ri, rj)] = std::min(ri, rj);
      }

  std::map<int, ClassDb::ClassEntry> merged;
  for (size_t i = 0; i < medoids.size(); ++i) merged[find(static_cast<int>(i))].prototypes.push_back(medoids[i]);
  for (auto& [r, entry] : merged) {
    entry.id = static_cast<int>(db.classes.size());
    db.classes.push_back(std::move(entry));
  }
  return db;
}

std::vector<Classification> classify_pairs(const std::vector<ColorPair>& pairs,
                                           const ClassDb& db) {
  if (db.classes.empty()) throw DataError("classify_pairs: empty class database");
  std::vector<Classification> out(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (is_degenerate(pairs[i])) continue;  // stays (-1, 0)
    int best_id = -1;
    double best_score = -1.0;
    for (const auto& cls : db.classes) {
      double score = 0.0;
      for (const auto& proto : cls.prototypes)
        score = std::max(score, colorpair_similarity(pairs[i], proto, db.lightness_weight));
      if (score > best_score) {
        best_score = score;
        best_id = cls.id;
      }
    }
    if (best_score >= db.similarity_threshold)
      out[i] = {best_id, best_score};
  }
  return out;
}

ExtractionResult extract_color_pairs(const RgbImage& rgb, const MaskImage& mask,
                                     const ExtractionParams& params) {
  ExtractionResult res;
  res.lab = bilateral_prefilter(rgb_to_lab(rgb), params.bilateral_spatial_sigma,
                                params.bilateral_range_sigma);
  GradientField grad = unified_gradient(res.lab, params.lightness_weight);
  res.edges = edge_nms_thickness(grad, params.gradient_threshold);
  res.pairs = sample_color_pairs(res.lab, res.edges, mask, params.sample);
  return res;
}

}  // namespace pf::colorpair

#include "poseforge/synth.hpp"

#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pf::synth {

namespace {

inline double signed_pow(double base, double expo) {
  return base >= 0 ? std::pow(base, expo) : -std::pow(-base, expo);
}

struct ShapeFn {
  Vec3 radii;
  double e1, e2;
  double disp_amp = 0.0;
  double disp_f1 = 0.0, disp_f2 = 0.0;
  double disp_p1 = 0.0, disp_p2 = 0.0;

  Vec3 position(double eta, double omega) const {
    double ce = std::cos(eta), se = std::sin(eta);
    double co = std::cos(omega), so = std::sin(omega);
    Vec3 p(radii.x() * signed_pow(ce, e1) * signed_pow(co, e2),
           radii.y() * signed_pow(ce, e1) * signed_pow(so, e2),
           radii.z() * signed_pow(se, e1));
    if (disp_amp > 0) {
      double s = 1.0 + disp_amp * std::sin(disp_f1 * eta + disp_p1) *
                           std::sin(disp_f2 * omega + disp_p2);
      p *= s;
    }
    return p;
  }

  Vec3 normal(double eta, double omega) const {
    const double h = 1e-4;
    double e = std::clamp(eta, -M_PI / 2 + 1e-3, M_PI / 2 - 1e-3);
    Vec3 te = position(e + h, omega) - position(e - h, omega);
    Vec3 to = position(e, omega + h) - position(e, omega - h);
    Vec3 n = to.cross(te);
    double nn = n.norm();
    if (nn < 1e-12) return position(e, omega).normalized();
    n /= nn;
    if (n.dot(position(e, omega)) < 0) n = -n;
    return n;
  }
};

Rgb8 hsv_to_rgb(double h, double s, double v) {
  double c = v * s;
  double hp = h / 60.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  double m = v - c;
  auto to8 = [&](double t) { return static_cast<uint8_t>(std::lround(255.0 * (t + m))); };
  return {to8(r), to8(g), to8(b)};
}

}  // namespace

TexturedMesh generate_shape(uint64_t seed, const ShapeParams& params) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);

  ShapeFn fn;
  fn.radii = Vec3(rng.uniform(params.min_radius, params.max_radius),
                  rng.uniform(params.min_radius, params.max_radius),
                  rng.uniform(params.min_radius, params.max_radius));
  fn.e1 = params.fixed_exponent1 > 0 ? params.fixed_exponent1 : rng.uniform(0.7, 1.5);
  fn.e2 = params.fixed_exponent2 > 0 ? params.fixed_exponent2 : rng.uniform(0.7, 1.5);
  if (params.displace) {
    fn.disp_amp = rng.uniform(0.03, 0.08);
    fn.disp_f1 = rng.uniform_int(2, 3);
    fn.disp_f2 = rng.uniform_int(3, 5);
    fn.disp_p1 = rng.uniform(0.0, 2.0 * M_PI);
    fn.disp_p2 = rng.uniform(0.0, 2.0 * M_PI);
  }

  const int wedges = std::clamp(params.min_classes, 3, 8);
  const int palette_size = wedges + 2;  // wedge colors + two polar caps
  std::vector<Rgb8> palette(palette_size);
  double hue0 = rng.uniform(0.0, 360.0);
  for (int i = 0; i < palette_size; ++i) {
    double hue = std::fmod(hue0 + i * 360.0 / palette_size, 360.0);
    double value = (i % 2 == 0) ? 0.95 : 0.70;
    palette[i] = hsv_to_rgb(hue, 0.85, value);
  }
  const double cap_lat = 62.0 * M_PI / 180.0;

  auto region_of = [&](double eta, double omega) {
    if (eta > cap_lat) return wedges;
    if (eta < -cap_lat) return wedges + 1;
    double frac = (omega + M_PI) / (2.0 * M_PI);
    int w = static_cast<int>(frac * wedges) % wedges;
    return w;
  };

  // Cells carry their own corner vertices so region borders stay crisp.
  TexturedMesh mesh;
  const int stacks = params.stacks, slices = params.slices;
  auto eta_at = [&](int i) { return -M_PI / 2 + M_PI * i / stacks; };
  auto omega_at = [&](int j) { return -M_PI + 2.0 * M_PI * j / slices; };

  for (int i = 0; i < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      double e0 = eta_at(i), e1v = eta_at(i + 1);
      double o0 = omega_at(j), o1 = omega_at(j + 1);
      double ec = 0.5 * (e0 + e1v), oc = 0.5 * (o0 + o1);
      Rgb8 color = palette[region_of(ec, oc)];

      int base = static_cast<int>(mesh.vertices.size());
      const double corners[4][2] = {{e0, o0}, {e0, o1}, {e1v, o1}, {e1v, o0}};
      for (auto& c : corners) {
        mesh.vertices.push_back(fn.position(c[0], c[1]));
        mesh.vertex_normals.push_back(fn.normal(c[0], c[1]));
        mesh.vertex_colors.push_back(color);
      }
      mesh.triangles.push_back({base, base + 1, base + 2});
      mesh.triangles.push_back({base, base + 2, base + 3});
    }
  }

  // Diameter over the unique parametric grid (duplicates add nothing).
  std::vector<Vec3> grid;
  grid.reserve((stacks + 1) * (slices + 1));
  for (int i = 0; i <= stacks; ++i)
    for (int j = 0; j <= slices; ++j) grid.push_back(fn.position(eta_at(i), omega_at(j)));
  double d2max = 0.0;
  for (size_t a = 0; a < grid.size(); ++a)
    for (size_t b = a + 1; b < grid.size(); ++b)
      d2max = std::max(d2max, (grid[a] - grid[b]).squaredNorm());
  mesh.diameter = std::sqrt(d2max);
  return mesh;
}

RgbdFrame render_rgbd(const TexturedMesh& mesh, const Se3Pose& pose, const CameraIntrinsics& k,
                      const Light& light) {
  k.validate();
  RgbdFrame frame;
  frame.intrinsics = k;
  frame.rgb = RgbImage(k.width, k.height, Rgb8{0, 0, 0});
  frame.depth = DepthImage(k.width, k.height, 0);
  frame.mask = MaskImage(k.width, k.height, 0);

  const double znear = 0.02;
  std::vector<Vec3> cam_pts(mesh.vertices.size());
  std::vector<Vec3> cam_normals(mesh.vertices.size());
  bool any_in_front = false;
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    cam_pts[i] = pose.apply(mesh.vertices[i]);
    cam_normals[i] = pose.rotation * mesh.vertex_normals[i];
    if (cam_pts[i].z() > znear) any_in_front = true;
  }
  if (!any_in_front) throw ObjectBehindCamera("render_rgbd: object lies behind the camera");

  std::vector<float> zbuf(static_cast<size_t>(k.width) * k.height,
                          std::numeric_limits<float>::infinity());

  auto lit_color = [&](const Rgb8& albedo, const Vec3& n) -> Vec3 {
    double shade = light.ambient + light.diffuse * std::max(0.0, n.dot(light.to_light));
    return Vec3(albedo.r * shade, albedo.g * shade, albedo.b * shade);
  };

  for (const auto& tri : mesh.triangles) {
    const Vec3 &p0 = cam_pts[tri[0]], &p1 = cam_pts[tri[1]], &p2 = cam_pts[tri[2]];
    if (p0.z() <= znear || p1.z() <= znear || p2.z() <= znear) continue;

    Vec2 s0 = project(p0, k), s1 = project(p1, k), s2 = project(p2, k);
    double area2 = (s1.x() - s0.x()) * (s2.y() - s0.y()) - (s1.y() - s0.y()) * (s2.x() - s0.x());
    if (std::abs(area2) < 1e-12) continue;

    int xmin = std::max(0, static_cast<int>(std::floor(std::min({s0.x(), s1.x(), s2.x()}))));
    int xmax = std::min(k.width - 1, static_cast<int>(std::ceil(std::max({s0.x(), s1.x(), s2.x()}))));
    int ymin = std::max(0, static_cast<int>(std::floor(std::min({s0.y(), s1.y(), s2.y()}))));
    int ymax = std::min(k.height - 1, static_cast<int>(std::ceil(std::max({s0.y(), s1.y(), s2.y()}))));
    if (xmin > xmax || ymin > ymax) continue;

    Vec3 c0 = lit_color(mesh.vertex_colors[tri[0]], cam_normals[tri[0]]);
    Vec3 c1 = lit_color(mesh.vertex_colors[tri[1]], cam_normals[tri[1]]);
    Vec3 c2 = lit_color(mesh.vertex_colors[tri[2]], cam_normals[tri[2]]);

    double iz0 = 1.0 / p0.z(), iz1 = 1.0 / p1.z(), iz2 = 1.0 / p2.z();
    Vec3 coz0 = c0 * iz0, coz1 = c1 * iz1, coz2 = c2 * iz2;

    for (int y = ymin; y <= ymax; ++y) {
      for (int x = xmin; x <= xmax; ++x) {
        // integer coordinates are pixel centers, matching project/lift
        double px = x, py = y;
        double w0 = ((s1.x() - px) * (s2.y() - py) - (s1.y() - py) * (s2.x() - px)) / area2;
        double w1 = ((s2.x() - px) * (s0.y() - py) - (s2.y() - py) * (s0.x() - px)) / area2;
        double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        double iz = w0 * iz0 + w1 * iz1 + w2 * iz2;
        float z = static_cast<float>(1.0 / iz);
        size_t idx = static_cast<size_t>(y) * k.width + x;
        if (z >= zbuf[idx]) continue;
        zbuf[idx] = z;
        Vec3 color = (w0 * coz0 + w1 * coz1 + w2 * coz2) / iz;
        auto to8 = [](double v) {
          return static_cast<uint8_t>(std::clamp(static_cast<int>(std::lround(v)), 0, 255));
        };
        frame.rgb.data()[idx] = {to8(color.x()), to8(color.y()), to8(color.z())};
        double z_mm = std::clamp(z * 1000.0, 1.0, 65535.0);
        frame.depth.data()[idx] = static_cast<uint16_t>(std::lround(z_mm));
        frame.mask.data()[idx] = 255;
      }
    }
  }
  return frame;
}

CameraIntrinsics default_intrinsics(int width, int height) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = 0.87 * width;
  k.cx = width / 2.0;
  k.cy = height / 2.0;
  return k;
}

std::vector<Se3Pose> sphere_view_poses(int count, double distance) {
  // Icosahedron directions, repeated with golden-angle spirals past 12.
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> dirs = {
      {0, 1, phi},  {0, -1, phi},  {0, 1, -phi},  {0, -1, -phi},
      {1, phi, 0},  {-1, phi, 0},  {1, -phi, 0},  {-1, -phi, 0},
      {phi, 0, 1},  {-phi, 0, 1},  {phi, 0, -1},  {-phi, 0, -1},
  };
  for (auto& d : dirs) d.normalize();
  while (static_cast<int>(dirs.size()) < count) {
    int i = static_cast<int>(dirs.size());
    double z = 1.0 - 2.0 * (i + 0.5) / count;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = i * 2.399963229728653;
    dirs.push_back(Vec3(r * std::cos(a), r * std::sin(a), z));
  }
  dirs.resize(count);

  std::vector<Se3Pose> poses;
  for (const auto& dir : dirs) {
    Vec3 eye = dir * distance;
    Vec3 forward = (-eye).normalized();
    Vec3 up_hint = std::abs(forward.z()) > 0.95 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
    Vec3 xc = up_hint.cross(forward).normalized();
    Vec3 yc = forward.cross(xc);
    Se3Pose pose;
    pose.rotation.row(0) = xc;
    pose.rotation.row(1) = yc;
    pose.rotation.row(2) = forward;
    pose.translation = -(pose.rotation * eye);
    poses.push_back(pose);
  }
  return poses;
}

ModelBuildResult build_model_cloud(const TexturedMesh& mesh, const CameraIntrinsics& k,
                                   const ModelCloudParams& params) {
  double distance = std::clamp(params.camera_distance_factor * mesh.diameter, 0.25, 1.2);
  auto poses = sphere_view_poses(params.view_count, distance);

  std::vector<RgbdFrame> frames;
  frames.reserve(poses.size());
  std::vector<colorpair::ColorPair> all_pairs;
  for (const auto& pose : poses) {
    frames.push_back(render_rgbd(mesh, pose, k, params.light));
    auto res = colorpair::extract_color_pairs(frames.back().rgb, frames.back().mask,
                                              params.extraction);
    all_pairs.insert(all_pairs.end(), res.pairs.begin(), res.pairs.end());
  }

  ModelBuildResult out;
  bool any_usable = false;
  for (const auto& p : all_pairs)
    if (!colorpair::is_degenerate(p)) {
      any_usable = true;
      break;
    }
  if (any_usable) {
    out.class_db = colorpair::build_class_db(all_pairs, params.class_threshold,
                                             params.lightness_weight);
  } else {
    // texture-free model: empty class db, surface layer still built below
    out.class_db.similarity_threshold = params.class_threshold;
    out.class_db.lightness_weight = params.lightness_weight;
  }

  KdTree3 vertex_tree(mesh.vertices);
  auto mesh_normal_at = [&](const Vec3& p) {
    int nearest = vertex_tree.nearest(p);
    return nearest >= 0 ? mesh.vertex_normals[nearest] : Vec3(p.normalized());
  };
  std::map<std::array<int64_t, 3>, int> voxels;
  auto voxel_of = [&](const Vec3& p) {
    return std::array<int64_t, 3>{static_cast<int64_t>(std::floor(p.x() / params.voxel_size)),
                                  static_cast<int64_t>(std::floor(p.y() / params.voxel_size)),
                                  static_cast<int64_t>(std::floor(p.z() / params.voxel_size))};
  };

  for (size_t vi = 0; vi < poses.size(); ++vi) {
    reg::ClassifiedCloud view;
    try {
      view = reg::classify_scene(frames[vi], out.class_db, params.extraction);
    } catch (const Error&) {
      continue;  // featureless view
    }
    Se3Pose to_model = poses[vi].inverse();
    for (size_t i = 0; i < view.size(); ++i) {
      Vec3 p = to_model.apply(view.points[i]);
      auto voxel = voxel_of(p);
      if (voxels.count(voxel)) continue;
      voxels[voxel] = 1;
      out.cloud.points.push_back(p);
      out.cloud.class_ids.push_back(view.class_ids[i]);
      out.cloud.weights.push_back(view.weights[i]);
      out.cloud.normals.push_back(mesh_normal_at(p));
    }
  }

  // unclassified surface layer, strided evenly over the views
  if (params.surface_samples > 0) {
    std::vector<Vec3> surface;
    for (size_t vi = 0; vi < poses.size(); ++vi) {
      Se3Pose to_model = poses[vi].inverse();
      const RgbdFrame& f = frames[vi];
      for (int y = 0; y < f.depth.height(); ++y)
        for (int x = 0; x < f.depth.width(); ++x)
          if (f.mask.at(x, y) && f.depth.at(x, y) != 0)
            surface.push_back(to_model.apply(lift(x, y, f.depth.at(x, y) * 1e-3, k)));
    }
    double stride = std::max(1.0, static_cast<double>(surface.size()) / params.surface_samples);
    for (double pos = 0; pos < surface.size(); pos += stride) {
      const Vec3& p = surface[static_cast<size_t>(pos)];
      auto voxel = voxel_of(p);
      if (voxels.count(voxel)) continue;
      voxels[voxel] = 1;
      out.cloud.points.push_back(p);
      out.cloud.class_ids.push_back(-1);
      out.cloud.weights.push_back(0.0);
      out.cloud.normals.push_back(mesh_normal_at(p));
    }
  }
  return out;
}

Sequence generate_sequence(const TexturedMesh& mesh, const CameraIntrinsics& k,
                           const SequenceParams& params, uint64_t seed) {
  Rng rng(seed ^ 0xa0761d6478bd642full);
  Sequence seq;
  seq.script.intrinsics = k;

  Se3Pose pose;
  pose.rotation = rng.random_rotation();
  pose.translation = Vec3(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02),
                          params.start_distance + rng.uniform(-0.03, 0.03));

  const double max_rot = params.max_deg_per_frame * M_PI / 180.0;
  const double max_trans = params.max_mm_per_frame * 1e-3;
  Vec3 omega = rng.unit_vector() * (max_rot > 0 ? rng.uniform(0.5, 1.0) * max_rot : 0.0);
  Vec3 vel = rng.unit_vector() * (max_trans > 0 ? rng.uniform(0.5, 1.0) * max_trans : 0.0);

  for (int f = 0; f < params.length; ++f) {
    seq.script.poses.push_back(pose);
    RgbdFrame frame = render_rgbd(mesh, pose, k, params.light);
    if (params.depth_noise_mm > 0 || params.dropout_prob > 0) {
      for (auto& d : frame.depth.data()) {
        if (d == 0) continue;
        if (params.dropout_prob > 0 && rng.uniform() < params.dropout_prob) {
          d = 0;
          continue;
        }
        if (params.depth_noise_mm > 0) {
          double noisy = d + rng.normal() * params.depth_noise_mm;
          d = static_cast<uint16_t>(std::clamp(noisy, 1.0, 65535.0));
        }
      }
    }
    seq.frames.push_back(std::move(frame));
    if (f + 1 == params.length) break;

    // bounded random-walk velocities, rotation applied about the object center
    omega = 0.85 * omega + 0.15 * rng.unit_vector() * max_rot;
    if (omega.norm() > max_rot && omega.norm() > 0) omega *= max_rot / omega.norm();
    vel = 0.85 * vel + 0.15 * rng.unit_vector() * max_trans;
    if (vel.norm() > max_trans && vel.norm() > 0) vel *= max_trans / vel.norm();

    Mat3 dr = Mat3::Identity();
    if (omega.norm() > 1e-12) dr = Eigen::AngleAxisd(omega.norm(), omega.normalized()).toRotationMatrix();
    pose.rotation = orthonormalize(dr * pose.rotation);
    Vec3 t_next = pose.translation + vel;
    // keep the object inside a loose frustum box
    if (std::abs(t_next.x()) > 0.06) vel.x() = -vel.x();
    if (std::abs(t_next.y()) > 0.05) vel.y() = -vel.y();
    if (t_next.z() < 0.35 || t_next.z() > 0.6) vel.z() = -vel.z();
    pose.translation += vel;
  }
  return seq;
}

}  // namespace pf::synth

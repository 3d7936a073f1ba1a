#include "poseforge/tracking.hpp"

#include <doctest.h>

#include <cmath>

using namespace pf;
using namespace pf::track;

namespace {

RgbdFrame textured_frame(uint64_t shape_seed, const Se3Pose& pose,
                         const CameraIntrinsics& k) {
  synth::ShapeParams sp;
  sp.min_classes = 3;
  return synth::render_rgbd(synth::generate_shape(shape_seed, sp), pose, k);
}

RgbdFrame shifted_frame(const RgbdFrame& src, int dx, int dy) {
  RgbdFrame out = src;
  out.rgb = RgbImage(src.rgb.width(), src.rgb.height(), Rgb8{0, 0, 0});
  out.depth = DepthImage(src.rgb.width(), src.rgb.height(), 0);
  out.mask = MaskImage(src.rgb.width(), src.rgb.height(), 0);
  for (int y = 0; y < src.rgb.height(); ++y)
    for (int x = 0; x < src.rgb.width(); ++x) {
      int nx = x + dx, ny = y + dy;
      if (!out.rgb.in_bounds(nx, ny)) continue;
      out.rgb.at(nx, ny) = src.rgb.at(x, y);
      out.depth.at(nx, ny) = src.depth.at(x, y);
      out.mask.at(nx, ny) = src.mask.at(x, y);
    }
  return out;
}

PointCloud random_cloud(Rng& rng, int n) {
  PointCloud out;
  for (int i = 0; i < n; ++i)
    out.points.emplace_back(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                            rng.uniform(-0.05, 0.05));
  return out;
}

}  // namespace

TEST_CASE("flow on identical frames is zero") {
  CameraIntrinsics k = synth::default_intrinsics();
  RgbdFrame frame = textured_frame(501, {Rng(1).random_rotation(), Vec3(0, 0, 0.4)}, k);
  auto matches = flow_correspondences(frame, frame, frame.mask);
  REQUIRE(matches.size() >= 20);
  for (const auto& m : matches) CHECK((m.cur_px - m.prev_px).norm() < 0.1);
}

TEST_CASE("flow recovers a pure image translation") {
  CameraIntrinsics k = synth::default_intrinsics();
  RgbdFrame frame = textured_frame(502, {Rng(2).random_rotation(), Vec3(0, 0, 0.4)}, k);
  RgbdFrame moved = shifted_frame(frame, 3, 0);

  auto matches = flow_correspondences(frame, moved, frame.mask);
  REQUIRE(matches.size() >= 20);
  std::vector<double> dx, dy;
  for (const auto& m : matches) {
    dx.push_back(m.cur_px.x() - m.prev_px.x());
    dy.push_back(m.cur_px.y() - m.prev_px.y());
  }
  std::sort(dx.begin(), dx.end());
  std::sort(dy.begin(), dy.end());
  CHECK(std::abs(dx[dx.size() / 2] - 3.0) < 0.25);
  CHECK(std::abs(dy[dy.size() / 2] - 0.0) < 0.25);
}

TEST_CASE("occluded targets are pruned by the forward-backward check") {
  CameraIntrinsics k = synth::default_intrinsics();
  RgbdFrame frame = textured_frame(503, {Rng(3).random_rotation(), Vec3(0, 0, 0.4)}, k);
  RgbdFrame moved = shifted_frame(frame, 3, 0);

  // paint a large occluder over the object's center in the second frame
  int cx = k.width / 2, cy = k.height / 2;
  for (int y = cy - 40; y < cy + 40; ++y)
    for (int x = cx - 40; x < cx + 40; ++x)
      if (moved.rgb.in_bounds(x, y)) moved.rgb.at(x, y) = {128, 128, 128};

  auto clean = flow_correspondences(frame, shifted_frame(frame, 3, 0), frame.mask);
  auto occluded = flow_correspondences(frame, moved, frame.mask);
  CHECK(occluded.size() < clean.size());
  // deep interior: beyond the aperture of the matching window
  for (const auto& m : occluded) {
    bool lands_inside = m.cur_px.x() > cx - 20 && m.cur_px.x() < cx + 20 &&
                        m.cur_px.y() > cy - 20 && m.cur_px.y() < cy + 20;
    CHECK_FALSE(lands_inside);
  }
}

TEST_CASE("external flow fields are sampled at the seeds") {
  CameraIntrinsics k = synth::default_intrinsics();
  RgbdFrame frame = textured_frame(504, {Rng(4).random_rotation(), Vec3(0, 0, 0.4)}, k);
  FlowField field(k.width, k.height, Eigen::Vector2f(3.0f, -2.0f));
  auto matches = flow_from_field(frame, field, frame.mask);
  REQUIRE(!matches.empty());
  for (const auto& m : matches) {
    CHECK(m.cur_px.x() - m.prev_px.x() == doctest::Approx(3.0));
    CHECK(m.cur_px.y() - m.prev_px.y() == doctest::Approx(-2.0));
  }
}

TEST_CASE("colorpair filtering keeps true matches and drops jumps") {
  CameraIntrinsics k = synth::default_intrinsics();
  RgbdFrame frame = textured_frame(505, {Rng(5).random_rotation(), Vec3(0, 0, 0.4)}, k);

  colorpair::ExtractionParams ep;
  LabImage lab = colorpair::bilateral_prefilter(colorpair::rgb_to_lab(frame.rgb),
                                                ep.bilateral_spatial_sigma,
                                                ep.bilateral_range_sigma);
  colorpair::EdgeMap edges = colorpair::edge_nms_thickness(
      colorpair::unified_gradient(lab, ep.lightness_weight), ep.gradient_threshold);

  // keep seeds on interior texture edges; silhouette pairs straddle the
  // black background and are rightly rejected as degenerate
  MaskImage eroded(k.width, k.height, 0);
  for (int y = 4; y < k.height - 4; ++y)
    for (int x = 4; x < k.width - 4; ++x) {
      bool all = true;
      for (int dy = -4; dy <= 4 && all; ++dy)
        for (int dx = -4; dx <= 4 && all; ++dx)
          if (!frame.mask.at(x + dx, y + dy)) all = false;
      if (all) eroded.at(x, y) = 255;
    }

  auto matches = flow_correspondences(frame, frame, eroded, {}, &edges);
  REQUIRE(matches.size() >= 20);

  FilterParams fp;
  auto filtered = filter_by_colorpair(matches, lab, lab, edges, edges, fp);
  CHECK(filtered.matches.size() >= matches.size() * 95 / 100);

  // deliberately jump matches to a different edge; most should now fail
  std::vector<FlowMatch> jumped = matches;
  int n = static_cast<int>(matches.size());
  for (int i = 0; i < n; ++i) jumped[i].cur_px = matches[(i + n / 2) % n].prev_px;
  auto refiltered = filter_by_colorpair(jumped, lab, lab, edges, edges, fp);
  CHECK(refiltered.matches.size() < jumped.size() / 2);

  auto empty = filter_by_colorpair({}, lab, lab, edges, edges, fp);
  CHECK(empty.matches.empty());
}

TEST_CASE("perspective normalization satisfies the canonical frame equations") {
  // direct evaluation
  PointCloud single;
  single.points = {Vec3(0, 0, 1)};
  auto [cloud, frame] = perspective_normalize(single, Vec3(0, 0, 1));
  CHECK((frame.r_p.col(0) - Vec3(-1, 0, 0)).norm() < 1e-12);
  CHECK((frame.r_p.col(1) - Vec3(0, -1, 0)).norm() < 1e-12);
  CHECK((frame.r_p.col(2) - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK(cloud.points[0].norm() < 1e-12);

  // orthonormal right-handed basis and exact inversion on random configs
  Rng rng(606);
  for (int i = 0; i < 1000; ++i) {
    Vec3 t = rng.unit_vector() * rng.uniform(0.2, 2.0);
    Vec3 u = rng.unit_vector();
    if (u.cross(t).norm() < 1e-3) continue;
    PointCloud pts = random_cloud(rng, 8);
    auto [normed, f] = perspective_normalize(pts, t, u);
    CHECK((f.r_p * f.r_p.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(f.r_p.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    for (size_t j = 0; j < pts.size(); ++j) {
      Vec3 back = f.r_p * normed.points[j] + t;
      CHECK((back - pts.points[j]).norm() < 1e-9);
    }
  }

  // centroid normalization centers the cloud
  PointCloud pts = random_cloud(rng, 50);
  for (auto& p : pts.points) p += Vec3(0.1, -0.2, 0.8);
  auto [normed, f2] = perspective_normalize(pts, pts.centroid());
  CHECK(normed.centroid().norm() < 1e-9);

  CHECK_THROWS_AS(perspective_normalize(pts, Vec3(0, -1, 0), Vec3(0, -1, 0)),
                  DegenerateUpVector);
}

TEST_CASE("two views differ by a pure rotation after normalization") {
  Rng rng(707);
  PointCloud object = random_cloud(rng, 60);  // model frame, centered-ish

  for (int trial = 0; trial < 10; ++trial) {
    Se3Pose v1{rng.random_rotation(), rng.unit_vector() * rng.uniform(0.3, 0.6)};
    Se3Pose v2{rng.random_rotation(), rng.unit_vector() * rng.uniform(0.3, 0.6)};
    PointCloud c1 = object.transformed(v1), c2 = object.transformed(v2);

    auto [n1, f1] = perspective_normalize(c1, c1.centroid());
    auto [n2, f2] = perspective_normalize(c2, c2.centroid());

    Mat3 r = estimate_relative_rotation(n1, n2);
    for (size_t i = 0; i < n1.size(); ++i)
      CHECK((r * n1.points[i] - n2.points[i]).norm() < 1e-9);

    // reconstructed camera rotation matches the true relative rotation
    Mat3 r_cam = camera_rotation_from_canonical(r, f1, f2);
    Mat3 gt = v2.rotation * v1.rotation.transpose();
    CHECK(rotation_angle(r_cam, gt) < 1e-7);
  }
}

TEST_CASE("motion features expose the documented layout") {
  Rng rng(808);
  PointCloud p1 = random_cloud(rng, 20);
  PointCloud p2 = p1;
  CanonicalFrame frame;
  frame.t_est = Vec3(0, 0, 0.5);

  auto same = build_motion_features(p1, p2, frame);
  REQUIRE(same.size() == 20);
  for (const auto& f : same) {
    for (int i = 10; i < 15; ++i) CHECK(f.v[i] == 0.0);  // flow blocks
    for (double v : f.v) CHECK(std::isfinite(v));
  }

  Mat3 r = rng.random_rotation();
  for (auto& p : p2.points) p = r * p;
  auto moved = build_motion_features(p1, p2, frame);
  for (size_t i = 0; i < moved.size(); ++i) {
    Vec3 flow(moved[i].v[10], moved[i].v[11], moved[i].v[12]);
    CHECK((flow - (p2.points[i] - p1.points[i])).norm() < 1e-12);
    CHECK(moved[i].v[0] == p1.points[i].x());
    CHECK(moved[i].v[3] == p2.points[i].x());
    CHECK(moved[i].v[13] == moved[i].v[8] - moved[i].v[6]);
    CHECK(moved[i].v[14] == moved[i].v[9] - moved[i].v[7]);
  }

  PointCloud shorter = random_cloud(rng, 3);
  CHECK_THROWS_AS(build_motion_features(p1, shorter, frame), LengthMismatch);
}

TEST_CASE("relative rotation estimation is exact and robust") {
  Rng rng(909);
  PointCloud p1 = random_cloud(rng, 80);

  // identity
  Mat3 id = estimate_relative_rotation(p1, p1);
  CHECK(rotation_angle(id, Mat3::Identity()) < 1e-9);

  // exact rotation
  Mat3 gt = rng.random_rotation();
  PointCloud p2;
  for (const auto& p : p1.points) p2.points.push_back(gt * p);
  CHECK(rotation_angle(estimate_relative_rotation(p1, p2), gt) < 1e-9);

  // 30% gross outliers
  int wins = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Mat3 r = rng.random_rotation();
    PointCloud a = random_cloud(rng, 100), b;
    for (const auto& p : a.points) b.points.push_back(r * p);
    for (int i = 0; i < 30; ++i)
      b.points[i] = Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    Mat3 est = estimate_relative_rotation(a, b);
    if (rotation_angle(est, r) < M_PI / 180.0) ++wins;
  }
  CHECK(wins >= 9);
}

TEST_CASE("relative translation via weighted median") {
  Rng rng(333);
  PointCloud p1 = random_cloud(rng, 60);

  // pure translation
  Vec3 t(0.01, -0.02, 0.03);
  PointCloud p2;
  for (const auto& p : p1.points) p2.points.push_back(p + t);
  Vec3 est = estimate_relative_translation(Mat3::Identity(), p1, p2);
  CHECK((est - t).norm() < 1e-9);

  // rotation about the centroid: t = c - R c
  Mat3 r = rng.random_rotation();
  Vec3 c = p1.centroid();
  PointCloud p3;
  for (const auto& p : p1.points) p3.points.push_back(r * (p - c) + c);
  Vec3 est2 = estimate_relative_translation(r, p1, p3);
  Vec3 analytic = c - r * c;
  CHECK((est2 - analytic).norm() < 1e-9);

  // 30% outliers barely move the median
  PointCloud p4 = p2;
  for (int i = 0; i < 18; ++i) p4.points[i] += Vec3(rng.uniform(-0.2, 0.2), 0.1, -0.15);
  Vec3 est3 = estimate_relative_translation(Mat3::Identity(), p1, p4);
  CHECK((est3 - t).norm() < 1e-3);
}

TEST_CASE("a registered rotation estimator takes over") {
  register_rotation_estimator([](const std::vector<MotionFeature>&) {
    return Mat3(Eigen::AngleAxisd(0.5, Vec3::UnitZ()).toRotationMatrix());
  });
  Rng rng(11);
  PointCloud p1 = random_cloud(rng, 10);
  Mat3 r = estimate_relative_rotation(p1, p1);
  CHECK(rotation_angle(r, Eigen::AngleAxisd(0.5, Vec3::UnitZ()).toRotationMatrix()) < 1e-12);
  clear_rotation_estimator();
  CHECK(rotation_angle(estimate_relative_rotation(p1, p1), Mat3::Identity()) < 1e-9);
}

TEST_CASE("track_step follows a static and a moving object") {
  synth::ShapeParams sp;
  sp.min_classes = 3;
  synth::TexturedMesh mesh = synth::generate_shape(606, sp);
  CameraIntrinsics k = synth::default_intrinsics();
  auto built = synth::build_model_cloud(mesh, k);

  synth::SequenceParams seq_params;
  seq_params.length = 6;
  seq_params.max_deg_per_frame = 1.5;
  seq_params.max_mm_per_frame = 3.0;
  synth::Sequence seq = synth::generate_sequence(mesh, k, seq_params, 2027);

  TrackParams tp;
  TrackState state = make_track_state(seq.script.poses[0], seq.frames[0], built.cloud, tp);
  for (size_t i = 1; i < seq.frames.size(); ++i) {
    auto step = track_step(state, seq.frames[i], tp);
    state = std::move(step.state);
    CHECK(rotation_angle(step.pose.rotation, seq.script.poses[i].rotation) < 2.0 * M_PI / 180.0);
    CHECK((step.pose.translation - seq.script.poses[i].translation).norm() < 4e-3);
  }
}

TEST_CASE("full occlusion loses the track") {
  synth::ShapeParams sp;
  sp.min_classes = 3;
  synth::TexturedMesh mesh = synth::generate_shape(607, sp);
  CameraIntrinsics k = synth::default_intrinsics();
  auto built = synth::build_model_cloud(mesh, k);

  Se3Pose pose{Rng(3).random_rotation(), Vec3(0, 0, 0.42)};
  RgbdFrame frame = synth::render_rgbd(mesh, pose, k);

  TrackParams tp;
  TrackState state = make_track_state(pose, frame, built.cloud, tp);

  RgbdFrame occluded = frame;
  occluded.rgb = RgbImage(k.width, k.height, Rgb8{90, 90, 90});
  occluded.depth = DepthImage(k.width, k.height, 0);
  occluded.mask = MaskImage(k.width, k.height, 0);
  CHECK_THROWS_AS(track_step(state, occluded, tp), TrackingLost);
}

TEST_CASE("procedural training pairs are deterministic and consistent") {
  TrainingPairParams params;
  TrainingPairStream s1(99, params), s2(99, params);
  TrainingPair a = s1.next(), b = s2.next();
  REQUIRE(a.cloud1.size() == b.cloud1.size());
  REQUIRE(a.cloud1.size() > 30);
  for (size_t i = 0; i < a.cloud1.size(); ++i) {
    CHECK(a.cloud1.points[i] == b.cloud1.points[i]);
    CHECK(a.cloud2.points[i] == b.cloud2.points[i]);
  }

  // ground-truth transform overlays cloud1 onto cloud2 within noise
  double noise = params.depth_noise_mm * 1e-3;
  int close = 0;
  for (size_t i = 0; i < a.cloud1.size(); ++i)
    if ((a.relative.apply(a.cloud1.points[i]) - a.cloud2.points[i]).norm() < 6 * noise + 1e-4)
      ++close;
  CHECK(static_cast<double>(close) / a.cloud1.size() > 0.95);

  // max_rot = 0 gives pure translations
  TrainingPairParams trans_only;
  trans_only.max_rot = 0.0;
  TrainingPairStream s3(7, trans_only);
  for (int i = 0; i < 3; ++i) {
    TrainingPair p = s3.next();
    CHECK((p.relative.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("canonical rotation estimates decouple from absolute placement") {
  Rng rng(515);
  PointCloud object = random_cloud(rng, 60);
  Mat3 rel = Eigen::AngleAxisd(0.3, Vec3(0.3, 1, 0.2).normalized()).toRotationMatrix();

  for (int place = 0; place < 20; ++place) {
    Se3Pose v1{rng.random_rotation(),
               Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.3, 0.7))};
    // rotate about the object's camera-frame centroid
    PointCloud c1 = object.transformed(v1);
    Vec3 centroid = c1.centroid();
    PointCloud c2;
    for (const auto& p : c1.points) c2.points.push_back(rel * (p - centroid) + centroid);

    auto [n1, f1] = perspective_normalize(c1, c1.centroid());
    auto [n2, f2] = perspective_normalize(c2, c2.centroid());
    Mat3 canonical = estimate_relative_rotation(n1, n2);
    Mat3 recon = camera_rotation_from_canonical(canonical, f1, f2);
    CHECK(rotation_angle(recon, rel) < 0.1 * M_PI / 180.0);
  }
}

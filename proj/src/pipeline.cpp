#include "poseforge/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace pf::pipeline {

Databases build_databases(const synth::TexturedMesh& mesh, const PipelineConfig& cfg) {
  Databases dbs;
  auto built = synth::build_model_cloud(mesh, cfg.camera, cfg.model_cloud_params());
  dbs.class_db = std::move(built.class_db);
  dbs.model_cloud = std::move(built.cloud);
  dbs.hash_db = reg::build_hash_db(dbs.model_cloud, cfg.hash_db_params());
  return dbs;
}

EstimateResult estimate_frame(const RgbdFrame& frame, const Databases& dbs,
                              const PipelineConfig& cfg,
                              std::vector<reg::PoseHypothesis>* hypotheses_out) {
  EstimateResult result;
  reg::ClassifiedCloud scene = reg::classify_scene(frame, dbs.class_db, cfg.extraction_params());
  auto hyps = reg::generate_hypotheses(scene, dbs.hash_db, cfg.hypothesis_params());
  result.hypothesis_count = static_cast<int>(hyps.size());
  if (hypotheses_out) *hypotheses_out = hyps;

  result.candidates = reg::hough_vote(hyps, cfg.hough_params());

  bool refined = false;
  double best_rms = std::numeric_limits<double>::infinity();
  std::string last_error = "no candidate refined";
  for (const auto& cand : result.candidates) {
    try {
      refine::IcpReport report = refine::icp_multiclass(scene, dbs.model_cloud, cand.pose,
                                                        cfg.icp_params());
      if (report.rms < best_rms) {
        best_rms = report.rms;
        result.pose = report.pose;
        result.icp = report;
        refined = true;
      }
    } catch (const AlgorithmError& e) {
      last_error = e.what();
    }
  }
  if (!refined) throw NoHypotheses("estimate_frame: refinement failed: " + last_error);
  return result;
}

TrackRunResult track_sequence(const std::vector<RgbdFrame>& frames, const Se3Pose& init,
                              const Databases& dbs, const PipelineConfig& cfg, int stride,
                              bool reinit) {
  if (frames.empty()) throw DataError("track_sequence: no frames");
  if (stride < 1) throw DataError("track_sequence: stride must be >= 1");

  TrackRunResult run;
  track::TrackParams params = cfg.track_params();
  track::TrackState state = track::make_track_state(init, frames[0], dbs.model_cloud, params);
  run.poses.push_back(init);
  run.frame_indices.push_back(0);

  for (size_t i = stride; i < frames.size(); i += stride) {
    try {
      auto step = track::track_step(state, frames[i], params);
      state = std::move(step.state);
      run.poses.push_back(step.pose);
    } catch (const TrackingLost&) {
      if (!reinit) {
        run.lost = true;
        run.lost_at = static_cast<int>(i);
        break;
      }
      EstimateResult est = estimate_frame(frames[i], dbs, cfg);
      state = track::make_track_state(est.pose, frames[i], dbs.model_cloud, params);
      run.poses.push_back(est.pose);
      run.reinit_frames.push_back(static_cast<int>(i));
    }
    run.frame_indices.push_back(static_cast<int>(i));
  }
  return run;
}

namespace {

struct LiftedPairs {
  PointCloud c1, c2;
  std::vector<double> weights;
};

bool depth_near(const DepthImage& depth, const Vec2& px, double* out) {
  int x = static_cast<int>(std::lround(px.x())), y = static_cast<int>(std::lround(px.y()));
  static constexpr int offsets[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (const auto& o : offsets) {
    int xx = x + o[0], yy = y + o[1];
    if (depth.in_bounds(xx, yy) && depth.at(xx, yy) != 0) {
      *out = depth.at(xx, yy) * 1e-3;
      return true;
    }
  }
  return false;
}

LiftedPairs lift_matches(const std::vector<track::FlowMatch>& matches,
                         const std::vector<double>& weights, const RgbdFrame& prev,
                         const RgbdFrame& cur) {
  LiftedPairs out;
  for (size_t i = 0; i < matches.size(); ++i) {
    double d1, d2;
    if (!depth_near(prev.depth, matches[i].prev_px, &d1) ||
        !depth_near(cur.depth, matches[i].cur_px, &d2))
      continue;
    out.c1.points.push_back(lift(matches[i].prev_px.x(), matches[i].prev_px.y(), d1,
                                 prev.intrinsics));
    out.c2.points.push_back(lift(matches[i].cur_px.x(), matches[i].cur_px.y(), d2,
                                 cur.intrinsics));
    out.weights.push_back(weights.empty() ? 1.0 : weights[i]);
  }
  return out;
}

// Raw relative pose (no ICP polish); throws on degenerate input.
Se3Pose raw_relative_pose(const LiftedPairs& pairs) {
  if (pairs.c1.size() < 3)
    throw DegenerateConfiguration("raw_relative_pose: too few lifted pairs");
  auto [n1, f1] = track::perspective_normalize(pairs.c1, pairs.c1.centroid());
  auto [n2, f2] = track::perspective_normalize(pairs.c2, pairs.c2.centroid());
  Mat3 canonical = track::estimate_relative_rotation(n1, n2, pairs.weights);
  Mat3 r_rel = track::camera_rotation_from_canonical(canonical, f1, f2);
  Vec3 t_rel = track::estimate_relative_translation(r_rel, pairs.c1, pairs.c2, pairs.weights);
  return {orthonormalize(r_rel), t_rel};
}

}  // namespace

std::vector<AblationRecord> ablate_sequence(const std::vector<RgbdFrame>& frames,
                                            const synth::MotionScript& script,
                                            const PipelineConfig& cfg, int stride,
                                            double corrupt_frac, uint64_t seed) {
  if (frames.size() != script.poses.size())
    throw LengthMismatch("ablate_sequence: frame/pose counts differ");
  if (static_cast<int>(frames.size()) < stride + 1)
    throw DataError("ablate_sequence: sequence shorter than stride + 1 frames");

  const auto extraction = cfg.extraction_params();
  const auto track_params = cfg.track_params();
  Rng rng(seed ^ 0x6a09e667f3bcc909ull);

  std::vector<AblationRecord> records;
  const double fail_sentinel = 10.0;

  for (size_t i = 0; i + stride < frames.size(); i += stride) {
    const RgbdFrame& prev = frames[i];
    const RgbdFrame& cur = frames[i + stride];
    Se3Pose gt_rel = se3_compose(script.poses[i + stride], script.poses[i].inverse());

    LabImage prev_lab = colorpair::bilateral_prefilter(
        colorpair::rgb_to_lab(prev.rgb), extraction.bilateral_spatial_sigma,
        extraction.bilateral_range_sigma);
    colorpair::EdgeMap prev_edges = colorpair::edge_nms_thickness(
        colorpair::unified_gradient(prev_lab, extraction.lightness_weight),
        extraction.gradient_threshold);
    LabImage cur_lab = colorpair::bilateral_prefilter(
        colorpair::rgb_to_lab(cur.rgb), extraction.bilateral_spatial_sigma,
        extraction.bilateral_range_sigma);
    colorpair::EdgeMap cur_edges = colorpair::edge_nms_thickness(
        colorpair::unified_gradient(cur_lab, extraction.lightness_weight),
        extraction.gradient_threshold);

    std::vector<track::FlowMatch> matches;
    try {
      matches = track::flow_correspondences(prev, cur, prev.mask, track_params.flow, &prev_edges);
    } catch (const AlgorithmError&) {
      continue;
    }

    // deliberate corruption: rewire a fraction of matches onto random edges
    if (corrupt_frac > 0) {
      std::vector<Vec2> cur_edge_px;
      for (int y = 0; y < cur.mask.height(); ++y)
        for (int x = 0; x < cur.mask.width(); ++x)
          if (cur_edges.is_centerline.at(x, y) && cur.mask.at(x, y) && cur.depth.at(x, y) != 0)
            cur_edge_px.emplace_back(x, y);
      if (!cur_edge_px.empty()) {
        for (auto& m : matches) {
          if (rng.uniform() < corrupt_frac)
            m.cur_px = cur_edge_px[rng.uniform_int(0, static_cast<int>(cur_edge_px.size()) - 1)];
        }
      }
    }

    // ground-truth flow per match, from the previous frame's depth
    std::vector<Vec2> est_flow, gt_flow;
    std::vector<char> has_gt(matches.size(), 0);
    std::vector<Vec2> gt_flow_all(matches.size());
    for (size_t mi = 0; mi < matches.size(); ++mi) {
      const auto& m = matches[mi];
      int x = static_cast<int>(std::lround(m.prev_px.x()));
      int y = static_cast<int>(std::lround(m.prev_px.y()));
      if (!prev.depth.in_bounds(x, y) || prev.depth.at(x, y) == 0) continue;
      Vec3 p1 = lift(m.prev_px.x(), m.prev_px.y(), prev.depth.at(x, y) * 1e-3, prev.intrinsics);
      Vec3 p2 = gt_rel.apply(p1);
      if (p2.z() <= 0) continue;
      gt_flow_all[mi] = project(p2, cur.intrinsics) - m.prev_px;
      has_gt[mi] = 1;
      est_flow.push_back(m.cur_px - m.prev_px);
      gt_flow.push_back(gt_flow_all[mi]);
    }
    if (est_flow.empty()) continue;

    AblationRecord rec;
    rec.pair_index = static_cast<int>(records.size());
    rec.epe_raw = metrics::endpoint_error(est_flow, gt_flow);

    auto filtered = track::filter_by_colorpair(matches, prev_lab, cur_lab, prev_edges, cur_edges,
                                               track_params.filter);
    std::vector<Vec2> est_flow_f, gt_flow_f;
    for (size_t fi = 0; fi < filtered.matches.size(); ++fi) {
      int mi = filtered.indices[fi];
      if (!has_gt[mi]) continue;
      est_flow_f.push_back(filtered.matches[fi].cur_px - filtered.matches[fi].prev_px);
      gt_flow_f.push_back(gt_flow_all[mi]);
    }
    rec.epe_filt = est_flow_f.empty() ? rec.epe_raw
                                      : metrics::endpoint_error(est_flow_f, gt_flow_f);

    auto eval_pose = [&](const std::vector<track::FlowMatch>& mlist,
                         const std::vector<double>& wlist, double* rot_out, double* trans_out) {
      *rot_out = fail_sentinel;
      *trans_out = fail_sentinel;
      try {
        LiftedPairs pairs = lift_matches(mlist, wlist, prev, cur);
        Se3Pose est_rel = raw_relative_pose(pairs);
        auto errs = metrics::normalized_motion_errors(est_rel, gt_rel);
        if (errs.rotation) *rot_out = *errs.rotation;
        if (errs.translation) *trans_out = *errs.translation;
      } catch (const Error&) {
      }
    };

    eval_pose(matches, {}, &rec.rot_raw, &rec.trans_raw);
    eval_pose(filtered.matches, filtered.similarities, &rec.rot_filt, &rec.trans_filt);
    records.push_back(rec);
  }
  return records;
}

RgbImage render_overlay(const RgbdFrame& frame, const reg::ClassifiedCloud& model,
                        const Se3Pose& pose, int stride) {
  RgbImage out = frame.rgb;
  for (size_t i = 0; i < model.size(); i += std::max(1, stride)) {
    Vec3 p = pose.apply(model.points[i]);
    if (p.z() <= 0) continue;
    Vec2 px = project(p, frame.intrinsics);
    int x = static_cast<int>(std::lround(px.x()));
    int y = static_cast<int>(std::lround(px.y()));
    if (out.in_bounds(x, y)) out.at(x, y) = {40, 255, 60};
  }
  return out;
}

}  // namespace pf::pipeline

#pragma once

#include "poseforge/config.hpp"
#include "poseforge/core.hpp"
#include "poseforge/metrics.hpp"
#include "poseforge/refine.hpp"
#include "poseforge/registration.hpp"
#include "poseforge/synth.hpp"
#include "poseforge/tracking.hpp"

namespace pf::pipeline {

struct Databases {
  colorpair::ClassDb class_db;
  reg::TriangleHashDb hash_db;
  reg::ClassifiedCloud model_cloud;  // model frame, with normals
};

Databases build_databases(const synth::TexturedMesh& mesh, const PipelineConfig& cfg);

struct EstimateResult {
  Se3Pose pose;
  int hypothesis_count = 0;
  std::vector<reg::ScoredPose> candidates;
  refine::IcpReport icp;
};

// classify -> hypotheses -> hough -> multiclass ICP over the top candidates,
// keeping the refinement with the lowest weighted RMS.
EstimateResult estimate_frame(const RgbdFrame& frame, const Databases& dbs,
                              const PipelineConfig& cfg,
                              std::vector<reg::PoseHypothesis>* hypotheses_out = nullptr);

struct TrackRunResult {
  std::vector<Se3Pose> poses;       // one per processed frame
  std::vector<int> frame_indices;   // source indices (stride-aware)
  std::vector<int> reinit_frames;
  bool lost = false;
  int lost_at = -1;
};

TrackRunResult track_sequence(const std::vector<RgbdFrame>& frames, const Se3Pose& init,
                              const Databases& dbs, const PipelineConfig& cfg, int stride = 1,
                              bool reinit = false);

struct AblationRecord {
  int pair_index = 0;
  double epe_raw = 0, epe_filt = 0;
  double rot_raw = 0, rot_filt = 0;
  double trans_raw = 0, trans_filt = 0;
};

// Fig-style comparison: raw estimator (no ICP polish) on all flow matches vs
// color-pair-filtered matches, on frame pairs at the given stride.
// corrupt_frac deliberately rewires that fraction of matches onto random
// other edges before filtering.
std::vector<AblationRecord> ablate_sequence(const std::vector<RgbdFrame>& frames,
                                            const synth::MotionScript& script,
                                            const PipelineConfig& cfg, int stride = 5,
                                            double corrupt_frac = 0.0, uint64_t seed = 0);

// Projects every n-th model point at the pose into a copy of the frame.
RgbImage render_overlay(const RgbdFrame& frame, const reg::ClassifiedCloud& model,
                        const Se3Pose& pose, int stride = 2);

}  // namespace pf::pipeline

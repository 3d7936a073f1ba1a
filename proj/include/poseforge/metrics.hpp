#pragma once

#include "poseforge/core.hpp"

#include <optional>

namespace pf::metrics {

struct PoseErrorRecord {
  double add = 0.0;              // meters
  double adds = 0.0;             // meters, <= add by construction
  double rotation_err_deg = 0.0;
  double translation_err = 0.0;  // meters
  int frame = 0;
};

// Mean distance between model points under the two poses, matched by index.
double add_error(const Se3Pose& est, const Se3Pose& gt, const std::vector<Vec3>& model_points);

// Nearest-neighbor variant for symmetric objects.
double adds_error(const Se3Pose& est, const Se3Pose& gt, const std::vector<Vec3>& model_points);
double adds_error_bruteforce(const Se3Pose& est, const Se3Pose& gt,
                             const std::vector<Vec3>& model_points);

// Fraction of errors below 10% of the object diameter.
double add_recall(const std::vector<double>& errors, double diameter);

// Area under the accuracy-threshold curve up to 10% of the diameter.
double add_auc(const std::vector<double>& errors, double diameter);

struct NormalizedMotionErrors {
  std::optional<double> rotation;     // absent when gt rotation is zero
  std::optional<double> translation;  // absent when gt translation is zero
};

// Residual rotation angle / translation magnitude, each normalized by the
// true relative motion.
NormalizedMotionErrors normalized_motion_errors(const Se3Pose& est_rel, const Se3Pose& gt_rel);

// Mean 2D endpoint distance between paired flow vectors.
double endpoint_error(const std::vector<Vec2>& flow_est, const std::vector<Vec2>& flow_gt);

PoseErrorRecord pose_error_record(const Se3Pose& est, const Se3Pose& gt,
                                  const std::vector<Vec3>& model_points, int frame = 0);

struct EvalSummary {
  double recall = 0.0;       // ADD recall at 10% diameter
  double recall_adds = 0.0;  // ADD-S recall at 10% diameter
  double auc = 0.0;          // ADD AUC up to 10% diameter
  double auc_adds = 0.0;
  double mean_add = 0.0;
  double mean_adds = 0.0;
  double mean_rotation_err_deg = 0.0;
  double mean_translation_err = 0.0;
  int frames = 0;
};

EvalSummary summarize(const std::vector<PoseErrorRecord>& records, double diameter);

}  // namespace pf::metrics

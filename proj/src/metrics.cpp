#include "poseforge/metrics.hpp"

#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>

namespace pf::metrics {

double add_error(const Se3Pose& est, const Se3Pose& gt, const std::vector<Vec3>& model_points) {
  if (model_points.empty()) throw DataError("add_error: empty model");
  double sum = 0.0;
  for (const auto& p : model_points) sum += (est.apply(p) - gt.apply(p)).norm();
  return sum / static_cast<double>(model_points.size());
}

double adds_error(const Se3Pose& est, const Se3Pose& gt, const std::vector<Vec3>& model_points) {
  if (model_points.empty()) throw DataError("adds_error: empty model");
  std::vector<Vec3> gt_pts(model_points.size());
  for (size_t i = 0; i < model_points.size(); ++i) gt_pts[i] = gt.apply(model_points[i]);
  KdTree3 tree(gt_pts);
  double sum = 0.0;
  for (const auto& p : model_points) {
    double d = 0.0;
    tree.nearest(est.apply(p), std::numeric_limits<double>::infinity(), &d);
    sum += d;
  }
  return sum / static_cast<double>(model_points.size());
}

double adds_error_bruteforce(const Se3Pose& est, const Se3Pose& gt,
                             const std::vector<Vec3>& model_points) {
  if (model_points.empty()) throw DataError("adds_error: empty model");
  std::vector<Vec3> gt_pts(model_points.size());
  for (size_t i = 0; i < model_points.size(); ++i) gt_pts[i] = gt.apply(model_points[i]);
  double sum = 0.0;
  for (const auto& p : model_points) {
    Vec3 q = est.apply(p);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gt_pts) best = std::min(best, (q - g).norm());
    sum += best;
  }
  return sum / static_cast<double>(model_points.size());
}

double add_recall(const std::vector<double>& errors, double diameter) {
  if (diameter <= 0) throw DataError("add_recall: diameter must be positive");
  if (errors.empty()) return 0.0;
  int hits = 0;
  for (double e : errors)
    if (e < 0.1 * diameter) ++hits;
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

double add_auc(const std::vector<double>& errors, double diameter) {
  if (diameter <= 0) throw DataError("add_auc: diameter must be positive");
  if (errors.empty()) return 0.0;
  const double tau = 0.1 * diameter;
  double sum = 0.0;
  for (double e : errors) sum += std::max(0.0, 1.0 - e / tau);
  return sum / static_cast<double>(errors.size());
}

NormalizedMotionErrors normalized_motion_errors(const Se3Pose& est_rel, const Se3Pose& gt_rel) {
  NormalizedMotionErrors out;
  double gt_angle = rotation_angle(gt_rel.rotation, Mat3::Identity());
  if (gt_angle > 1e-12)
    out.rotation = rotation_angle(est_rel.rotation, gt_rel.rotation) / gt_angle;
  double gt_trans = gt_rel.translation.norm();
  if (gt_trans > 1e-12)
    out.translation = (est_rel.translation - gt_rel.translation).norm() / gt_trans;
  return out;
}

double endpoint_error(const std::vector<Vec2>& flow_est, const std::vector<Vec2>& flow_gt) {
  if (flow_est.size() != flow_gt.size())
    throw LengthMismatch("endpoint_error: flow lengths differ");
  if (flow_est.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < flow_est.size(); ++i) sum += (flow_est[i] - flow_gt[i]).norm();
  return sum / static_cast<double>(flow_est.size());
}

PoseErrorRecord pose_error_record(const Se3Pose& est, const Se3Pose& gt,
                                  const std::vector<Vec3>& model_points, int frame) {
  PoseErrorRecord rec;
  rec.add = add_error(est, gt, model_points);
  rec.adds = adds_error(est, gt, model_points);
  rec.rotation_err_deg = rotation_angle(est.rotation, gt.rotation) * 180.0 / M_PI;
  rec.translation_err = (est.translation - gt.translation).norm();
  rec.frame = frame;
  return rec;
}

EvalSummary summarize(const std::vector<PoseErrorRecord>& records, double diameter) {
  EvalSummary s;
  s.frames = static_cast<int>(records.size());
  if (records.empty()) return s;
  std::vector<double> adds_list, add_list;
  for (const auto& r : records) {
    add_list.push_back(r.add);
    adds_list.push_back(r.adds);
    s.mean_add += r.add;
    s.mean_adds += r.adds;
    s.mean_rotation_err_deg += r.rotation_err_deg;
    s.mean_translation_err += r.translation_err;
  }
  double n = static_cast<double>(records.size());
  s.mean_add /= n;
  s.mean_adds /= n;
  s.mean_rotation_err_deg /= n;
  s.mean_translation_err /= n;
  s.recall = add_recall(add_list, diameter);
  s.recall_adds = add_recall(adds_list, diameter);
  s.auc = add_auc(add_list, diameter);
  s.auc_adds = add_auc(adds_list, diameter);
  return s;
}

}  // namespace pf::metrics

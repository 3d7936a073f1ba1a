#pragma once

#include "poseforge/core.hpp"
#include "poseforge/registration.hpp"

#include <map>

namespace pf::refine {

struct IcpParams {
  int pyramid_levels = 3;
  int max_iters_per_level = 15;
  std::vector<double> correspondence_radius = {0.03, 0.015, 0.008};  // coarse to fine
  std::vector<double> subsample_fractions = {0.25, 0.5, 1.0};
  double robust_kernel_scale = 0.005;  // Huber, meters
  double aggregate_weight = 0.5;       // pcd0 constraint
  double unclassified_weight = 0.5;    // pcd0 point factor for class -1 points
  double convergence_eps_rot = 1e-4;   // radians
  double convergence_eps_trans = 1e-5; // meters
  uint64_t seed = 12345;               // per-level subsampling

  void validate() const;
};

struct IcpReport {
  Se3Pose pose;
  int iterations = 0;
  std::map<int, int> per_class_inliers;  // last iteration; key -1 = aggregate pairs
  double rms = 0.0;                      // final weighted RMS, meters
  bool converged = false;
};

// Per-iteration costs evaluated on the iteration's own correspondences and
// weights, before and after the single joint update.
struct IcpIterationTrace {
  double cost_before = 0.0;
  double cost_after = 0.0;
};

// Joint per-class + aggregated (pcd0) point-to-point ICP. Each iteration
// gathers class-restricted and aggregate correspondences and solves one
// weighted update over all of them.
IcpReport icp_multiclass(const reg::ClassifiedCloud& scene, const reg::ClassifiedCloud& model,
                         const Se3Pose& init, const IcpParams& params = {},
                         std::vector<IcpIterationTrace>* trace = nullptr);

struct PointToPlaneParams {
  double correspondence_radius = 0.03;
  double huber_scale = 0.01;
  int min_pairs = 6;
};

// Exactly fixed_iters Gauss-Newton steps on the point-to-plane objective,
// no early exit. pose maps model coordinates into the scene (camera) frame.
Se3Pose point_to_plane_icp(const PointCloud& scene, const PointCloud& model, const Se3Pose& init,
                           int fixed_iters, const PointToPlaneParams& params = {});

// Linearized point-to-plane residual Jacobian wrt (rotation, translation)
// increments; exposed for finite-difference verification.
Eigen::Matrix<double, 1, 6> point_to_plane_jacobian(const Vec3& src, const Vec3& normal);

}  // namespace pf::refine

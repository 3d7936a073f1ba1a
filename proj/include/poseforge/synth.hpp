#pragma once

#include "poseforge/core.hpp"
#include "poseforge/registration.hpp"

#include <array>

namespace pf::synth {

struct TexturedMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Rgb8> vertex_colors;
  std::vector<Vec3> vertex_normals;  // unit, outward
  double diameter = 0.0;             // max pairwise vertex distance
};

struct ShapeParams {
  int min_classes = 3;
  int stacks = 36;
  int slices = 60;
  double min_radius = 0.035;  // meters
  double max_radius = 0.070;
  bool displace = true;
  // set both exponents to 1 and displace=false for an exact ellipsoid
  double fixed_exponent1 = -1.0;  // < 0 means randomized
  double fixed_exponent2 = -1.0;
};

// Deterministic per seed: superellipsoid with sinusoidal displacement and a
// wedge/cap region texture with well-separated palette colors.
TexturedMesh generate_shape(uint64_t seed, const ShapeParams& params = {});

struct Light {
  Vec3 to_light = Vec3(0.35, -0.45, -0.85).normalized();  // camera frame
  // defaults keep shade <= 0.92 so highlights never clip
  double diffuse = 0.5;
  double ambient = 0.42;
};

// Z-buffer rasterization with Gouraud-shaded Lambertian lighting.
// pose maps model coordinates into the camera frame.
RgbdFrame render_rgbd(const TexturedMesh& mesh, const Se3Pose& pose, const CameraIntrinsics& k,
                      const Light& light = {});

struct ModelCloudParams {
  int view_count = 12;
  double voxel_size = 0.002;  // meters, merge deduplication
  double class_threshold = 0.85;
  double lightness_weight = 0.3;
  colorpair::ExtractionParams extraction;
  double camera_distance_factor = 3.0;  // times mesh diameter
  Light light;
  // unclassified surface points added for the pcd0 constraint and the PPF
  // fallback; sampled from rendered depth across views
  int surface_samples = 1500;
};

struct ModelBuildResult {
  reg::ClassifiedCloud cloud;  // model frame, with normals
  colorpair::ClassDb class_db;
};

// Renders icosahedral views, clusters their color-pairs into a class
// database, and back-projects classified edge points into the model frame.
ModelBuildResult build_model_cloud(const TexturedMesh& mesh, const CameraIntrinsics& k,
                                   const ModelCloudParams& params = {});

// Camera intrinsics used across the synthetic suites.
CameraIntrinsics default_intrinsics(int width = 320, int height = 240);

// View poses on a sphere around the model origin (model -> camera).
std::vector<Se3Pose> sphere_view_poses(int count, double distance);

struct MotionScript {
  std::vector<Se3Pose> poses;  // ground truth per frame, model -> camera
  CameraIntrinsics intrinsics;
  double fps = 30.0;
};

struct SequenceParams {
  int length = 60;
  double max_deg_per_frame = 2.0;
  double max_mm_per_frame = 4.0;
  double depth_noise_mm = 0.0;
  double dropout_prob = 0.0;
  double start_distance = 0.45;  // meters
  Light light;
};

struct Sequence {
  std::vector<RgbdFrame> frames;
  MotionScript script;
};

Sequence generate_sequence(const TexturedMesh& mesh, const CameraIntrinsics& k,
                           const SequenceParams& params, uint64_t seed);

}  // namespace pf::synth

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Error hierarchy. DataError maps to CLI exit code 2, AlgorithmError to 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
class DataError : public Error {
 public:
  using Error::Error;
};
class AlgorithmError : public Error {
 public:
  using Error::Error;
};

struct NonPositiveDepth : DataError { using DataError::DataError; };
struct DegeneratePair : DataError { using DataError::DataError; };
struct EmptyMask : DataError { using DataError::DataError; };
struct NoValidDepth : DataError { using DataError::DataError; };
struct LengthMismatch : DataError { using DataError::DataError; };
struct DegenerateUpVector : DataError { using DataError::DataError; };
struct ObjectBehindCamera : DataError { using DataError::DataError; };
struct InsufficientClasses : DataError { using DataError::DataError; };
struct DegenerateConfiguration : AlgorithmError { using AlgorithmError::AlgorithmError; };
struct NoHypotheses : AlgorithmError { using AlgorithmError::AlgorithmError; };
struct NoCorrespondences : AlgorithmError { using AlgorithmError::AlgorithmError; };
struct DivergenceDetected : AlgorithmError { using AlgorithmError::AlgorithmError; };
struct NoTrackablePoints : AlgorithmError { using AlgorithmError::AlgorithmError; };
struct TrackingLost : AlgorithmError { using AlgorithmError::AlgorithmError; };

// Rigid transform, rotation applied before translation: p' = R p + t.
struct Se3Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Se3Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Se3Pose inverse() const {
    Se3Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  static Se3Pose from_matrix(const Mat4& m) {
    Se3Pose p;
    p.rotation = m.block<3, 3>(0, 0);
    p.translation = m.block<3, 1>(0, 3);
    return p;
  }

  bool is_valid(double tol = 1e-9) const;
};

// (a o b): apply b first, then a.
Se3Pose se3_compose(const Se3Pose& a, const Se3Pose& b);

// Geodesic angle between two rotations, in [0, pi].
double rotation_angle(const Mat3& a, const Mat3& b);

// Re-orthonormalizes a near-rotation matrix (closest in Frobenius norm).
Mat3 orthonormalize(const Mat3& m);

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
};

// Pinhole projection; p.z must be > 0.
Vec2 project(const Vec3& p, const CameraIntrinsics& k);
// Back-projection of pixel (u, v) at depth d meters; d must be > 0.
Vec3 lift(double u, double v, double d, const CameraIntrinsics& k);

template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }

  T& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  const T& at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_size(int w, int h) const { return width_ == w && height_ == h; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Rgb8 {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb8&) const = default;
};

using RgbImage = Image<Rgb8>;
using DepthImage = Image<uint16_t>;  // millimeters, 0 = invalid
using MaskImage = Image<uint8_t>;    // nonzero = object
using GrayImage = Image<float>;
using LabImage = Image<Eigen::Vector3f>;  // L* in [0,100], a*/b* in [-128,127]

struct RgbdFrame {
  RgbImage rgb;
  DepthImage depth;
  MaskImage mask;
  CameraIntrinsics intrinsics;

  void validate() const;  // all planes share dimensions, matching intrinsics
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty, or one unit vector per point
  std::vector<Vec3> colors;   // empty, or one CIELAB triple per point

  size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
  Vec3 centroid() const;
  PointCloud transformed(const Se3Pose& t) const;
};

// Deterministic RNG: the mt19937_64 engine is fully specified by the
// standard; distributions are hand-rolled because std:: ones are not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  int uniform_int(int lo, int hi);        // inclusive
  double normal();                        // standard normal, Box-Muller
  Vec3 unit_vector();
  Mat3 random_rotation();                 // uniform over SO(3)

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pf

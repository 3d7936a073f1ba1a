#include "poseforge/core.hpp"
#include "poseforge/kdtree.hpp"

#include <algorithm>
#include <cmath>

namespace pf {

bool Se3Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  Mat3 should_be_id = rotation.transpose() * rotation;
  if ((should_be_id - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Se3Pose se3_compose(const Se3Pose& a, const Se3Pose& b) {
  Se3Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  double c = ((a.transpose() * b).trace() - 1.0) * 0.5;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 d = Mat3::Identity();
    d(2, 2) = -1.0;
    r = svd.matrixU() * d * svd.matrixV().transpose();
  }
  return r;
}

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw DataError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DataError("intrinsics: image size must be positive");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw DataError("intrinsics: principal point outside image");
}

Vec2 project(const Vec3& p, const CameraIntrinsics& k) {
  if (p.z() <= 0) throw NonPositiveDepth("project: point depth must be positive");
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Vec3 lift(double u, double v, double d, const CameraIntrinsics& k) {
  if (d <= 0) throw NonPositiveDepth("lift: depth must be positive");
  return {(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d};
}

void RgbdFrame::validate() const {
  intrinsics.validate();
  const int w = intrinsics.width, h = intrinsics.height;
  if (!rgb.same_size(w, h) || !depth.same_size(w, h) || !mask.same_size(w, h))
    throw DataError("rgbd frame: plane dimensions do not match intrinsics");
}

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  if (points.empty()) return c;
  for (const auto& p : points) c += p;
  return c / static_cast<double>(points.size());
}

PointCloud PointCloud::transformed(const Se3Pose& t) const {
  PointCloud out;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(t.apply(p));
  out.normals.reserve(normals.size());
  for (const auto& n : normals) out.normals.push_back(t.rotation * n);
  out.colors = colors;
  return out;
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  // modulo bias is negligible for desk-scale ranges
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

Vec3 Rng::unit_vector() {
  double z = uniform(-1.0, 1.0);
  double a = uniform(0.0, 2.0 * M_PI);
  double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(a), r * std::sin(a), z};
}

Mat3 Rng::random_rotation() {
  // Shoemake's uniform quaternion sampling
  double u1 = uniform(), u2 = uniform(), u3 = uniform();
  double s1 = std::sqrt(1.0 - u1), s2 = std::sqrt(u1);
  Eigen::Quaterniond q(s2 * std::cos(2.0 * M_PI * u3), s1 * std::sin(2.0 * M_PI * u2),
                       s1 * std::cos(2.0 * M_PI * u2), s2 * std::sin(2.0 * M_PI * u3));
  return q.normalized().toRotationMatrix();
}

// ---- KdTree3 ----

KdTree3::KdTree3(const std::vector<Vec3>& pts) : pts_(pts) {
  if (pts_.empty()) return;
  std::vector<int> idx(pts_.size());
  for (size_t i = 0; i < pts_.size(); ++i) idx[i] = static_cast<int>(i);
  nodes_.reserve(pts_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree3::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  int axis = depth % 3;
  int mid = (lo + hi) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     double va = pts_[a][axis], vb = pts_[b][axis];
                     if (va != vb) return va < vb;
                     return a < b;
                   });
  int node_id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[node_id].axis = axis;
  nodes_[node_id].index = idx[mid];
  int left = build(idx, lo, mid, depth + 1);
  int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  return node_id;
}

void KdTree3::search(int node, const Vec3& q, double& best_d2, int& best_i) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = pts_[n.index];
  double d2 = (p - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && n.index < best_i)) {
    best_d2 = d2;
    best_i = n.index;
  }
  double delta = q[n.axis] - p[n.axis];
  int near = delta < 0 ? n.left : n.right;
  int far = delta < 0 ? n.right : n.left;
  search(near, q, best_d2, best_i);
  if (delta * delta <= best_d2) search(far, q, best_d2, best_i);
}

int KdTree3::nearest(const Vec3& q, double max_dist, double* dist_out) const {
  if (pts_.empty()) return -1;
  double best_d2 = max_dist * max_dist;
  int best_i = -1;
  double d2 = best_d2;
  search(root_, q, d2, best_i);
  if (best_i >= 0 && d2 <= best_d2) {
    if (dist_out) *dist_out = std::sqrt(d2);
    return best_i;
  }
  return -1;
}

void KdTree3::search_knn(int node, const Vec3& q, int k,
                         std::vector<std::pair<double, int>>& heap) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = pts_[n.index];
  double d2 = (p - q).squaredNorm();
  if (static_cast<int>(heap.size()) < k) {
    heap.emplace_back(d2, n.index);
    std::push_heap(heap.begin(), heap.end());
  } else if (std::make_pair(d2, n.index) < heap.front()) {
    std::pop_heap(heap.begin(), heap.end());
    heap.back() = {d2, n.index};
    std::push_heap(heap.begin(), heap.end());
  }
  double delta = q[n.axis] - p[n.axis];
  int near = delta < 0 ? n.left : n.right;
  int far = delta < 0 ? n.right : n.left;
  search_knn(near, q, k, heap);
  if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
    search_knn(far, q, k, heap);
}

std::vector<std::pair<double, int>> KdTree3::knn(const Vec3& q, int k) const {
  std::vector<std::pair<double, int>> heap;
  if (pts_.empty() || k <= 0) return heap;
  heap.reserve(k);
  search_knn(root_, q, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  for (auto& e : heap) e.first = std::sqrt(e.first);
  return heap;
}

}  // namespace pf

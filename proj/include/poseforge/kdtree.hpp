#pragma once

#include "poseforge/core.hpp"

#include <limits>
#include <utility>

namespace pf {

// Static 3D k-d tree, median split. Indices refer to the point vector the
// tree was built from.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(const std::vector<Vec3>& pts);

  bool empty() const { return pts_.empty(); }
  size_t size() const { return pts_.size(); }

  // Nearest neighbor within max_dist; returns -1 if none.
  int nearest(const Vec3& q, double max_dist = std::numeric_limits<double>::infinity(),
              double* dist_out = nullptr) const;

  // k nearest neighbors, ascending by distance; ties broken by index.
  std::vector<std::pair<double, int>> knn(const Vec3& q, int k) const;

 private:
  struct Node {
    int left = -1;
    int right = -1;
    int axis = 0;
    int index = -1;  // point stored at this node
  };

  std::vector<Vec3> pts_;
  std::vector<Node> nodes_;
  int root_ = -1;

  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Vec3& q, double& best_d2, int& best_i) const;
  void search_knn(int node, const Vec3& q, int k,
                  std::vector<std::pair<double, int>>& heap) const;
};

}  // namespace pf

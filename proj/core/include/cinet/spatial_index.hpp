#pragma once

#include "cinet/point_cloud.hpp"

#include <vector>

namespace cinet {

// Exact nearest-neighbour queries over a fixed cloud (kd-tree, median split).
// Results are exact: k-NN returns min(k, n) distinct indices ordered by
// nondecreasing distance, equal distances broken by ascending index. Radius
// queries return every point within the radius (inclusive) in a deterministic
// traversal order. Queries do not mutate the index and may run concurrently.
class SpatialIndex {
 public:
  struct Neighbor {
    int index;
    double distance;  // Euclidean
  };

  explicit SpatialIndex(const PointCloud& cloud);

  std::vector<Neighbor> knn(const Eigen::Vector3d& anchor, int k) const;

  // Pairs of (index, squared distance), traversal order.
  void radius_squared(const Eigen::Vector3d& anchor, double radius,
                      std::vector<std::pair<int, double>>& out) const;

  int size() const { return static_cast<int>(points_.size()); }

 private:
  struct Node {
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;     // leaf span in order_
    int axis = 0;
    double split = 0.0;
    Eigen::Vector3d lo, hi;  // bounding box of the subtree
  };

  int build(int begin, int end);

  std::vector<Eigen::Vector3d> points_;
  std::vector<int> order_;  // permutation of point indices, leaves own contiguous spans
  std::vector<Node> nodes_;
  int root_ = -1;

  static constexpr int kLeafSize = 16;
};

}  // namespace cinet

#include "cinet/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace cinet {

namespace {

double box_min_sqdist(const Eigen::Vector3d& p, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = p[a] < lo[a] ? lo[a] - p[a] : (p[a] > hi[a] ? p[a] - hi[a] : 0.0);
    acc += d * d;
  }
  return acc;
}

}  // namespace

SpatialIndex::SpatialIndex(const PointCloud& cloud) : points_(cloud.points) {
  if (points_.empty()) throw std::invalid_argument("SpatialIndex: empty cloud");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.size() / kLeafSize + 4);
  root_ = build(0, static_cast<int>(points_.size()));
}

int SpatialIndex::build(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = points_[order_[begin]];
  node.hi = node.lo;
  for (int i = begin + 1; i < end; ++i) {
    node.lo = node.lo.cwiseMin(points_[order_[i]]);
    node.hi = node.hi.cwiseMax(points_[order_[i]]);
  }

  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);

  if (end - begin <= kLeafSize) {
    // Leaf spans sorted by point index so traversal order does not depend on
    // how nth_element happened to partition.
    std::sort(order_.begin() + begin, order_.begin() + end);
    return id;
  }

  int axis = 0;
  const Eigen::Vector3d extent = node.hi - node.lo;
  if (extent.y() > extent[axis]) axis = 1;
  if (extent.z() > extent[axis]) axis = 2;

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double ca = points_[a][axis], cb = points_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });

  // Written after the recursive calls may have reallocated nodes_.
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<SpatialIndex::Neighbor> SpatialIndex::knn(const Eigen::Vector3d& anchor, int k) const {
  if (k <= 0) throw std::invalid_argument("SpatialIndex::knn: k must be >= 1");
  const int want = std::min<int>(k, static_cast<int>(points_.size()));

  // Max-heap on (squared distance, index); top() is the current worst keeper.
  std::priority_queue<std::pair<double, int>> heap;

  auto consider = [&](int idx) {
    const double d2 = (points_[idx] - anchor).squaredNorm();
    const std::pair<double, int> cand{d2, idx};
    if (static_cast<int>(heap.size()) < want) {
      heap.push(cand);
    } else if (cand < heap.top()) {
      heap.pop();
      heap.push(cand);
    }
  };

  // Recursive best-first descent. Pruning must be strict: a box at exactly the
  // worst distance can still hold a lower-index point.
  auto visit = [&](auto&& self, int node_id) -> void {
    const Node& node = nodes_[node_id];
    if (static_cast<int>(heap.size()) == want &&
        box_min_sqdist(anchor, node.lo, node.hi) > heap.top().first)
      return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) consider(order_[i]);
      return;
    }
    const bool left_first = anchor[node.axis] < node.split;
    self(self, left_first ? node.left : node.right);
    self(self, left_first ? node.right : node.left);
  };
  visit(visit, root_);

  std::vector<Neighbor> result(heap.size());
  for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    result[i] = Neighbor{heap.top().second, std::sqrt(heap.top().first)};
    heap.pop();
  }
  return result;
}

void SpatialIndex::radius_squared(const Eigen::Vector3d& anchor, double radius,
                                  std::vector<std::pair<int, double>>& out) const {
  if (radius < 0.0) throw std::invalid_argument("SpatialIndex::radius_squared: negative radius");
  const double r2 = radius * radius;

  auto visit = [&](auto&& self, int node_id) -> void {
    const Node& node = nodes_[node_id];
    if (box_min_sqdist(anchor, node.lo, node.hi) > r2) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[i];
        const double d2 = (points_[idx] - anchor).squaredNorm();
        if (d2 <= r2) out.emplace_back(idx, d2);
      }
      return;
    }
    self(self, node.left);
    self(self, node.right);
  };
  visit(visit, root_);
}

}  // namespace cinet

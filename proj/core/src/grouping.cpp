#include "cinet/grouping.hpp"

#include "cinet/sampling.hpp"

#include <limits>
#include <stdexcept>
#include <string>

namespace cinet {

PointGroups group_points(const PointCloud& cloud, int n_groups, int k) {
  SpatialIndex index(cloud);
  return group_points(cloud, index, n_groups, k);
}

PointGroups group_points(const PointCloud& cloud, const SpatialIndex& index, int n_groups, int k) {
  const int n = static_cast<int>(cloud.size());
  if (n_groups < 1) throw std::invalid_argument("group_points: n_groups must be positive");
  if (k < 1) throw std::invalid_argument("group_points: k must be positive");
  if (k > n) {
    throw std::invalid_argument("group_points: k=" + std::to_string(k) + " exceeds point count " +
                                std::to_string(n));
  }
  if (n_groups > n) {
    throw std::invalid_argument("group_points: n_groups=" + std::to_string(n_groups) +
                                " exceeds point count " + std::to_string(n));
  }

  PointGroups groups;
  groups.k = k;
  groups.keypoints = farthest_point_sample(cloud, n_groups);
  groups.members.resize(n_groups);
  groups.local.resize(n_groups);

  // Best (squared distance, group slot) pair per point over the groups that
  // contain it. Lexicographic comparison keeps ties on the lowest slot.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best_d2(n, inf);
  std::vector<int> best_slot(n, -1);
  std::vector<int> best_member_slot(n, -1);

  for (int g = 0; g < n_groups; ++g) {
    const Eigen::Vector3d anchor = cloud.points[groups.keypoints[g]];
    const auto nb = index.knn(anchor, k);
    groups.members[g].resize(k);
    groups.local[g].resize(k);
    for (int s = 0; s < k; ++s) {
      const int p = nb[s].index;
      groups.members[g][s] = p;
      groups.local[g][s] = cloud.points[p] - anchor;
      const double d2 = nb[s].distance * nb[s].distance;
      if (d2 < best_d2[p]) {
        best_d2[p] = d2;
        best_slot[p] = g;
        best_member_slot[p] = s;
      }
    }
  }

  groups.assignment.resize(n);
  groups.member_slot.resize(n);
  for (int p = 0; p < n; ++p) {
    if (best_slot[p] >= 0) {
      groups.assignment[p] = best_slot[p];
      groups.member_slot[p] = best_member_slot[p];
      continue;
    }
    // Orphan point: linear scan over keypoints, lowest slot wins ties.
    double best = inf;
    int slot = 0;
    for (int g = 0; g < n_groups; ++g) {
      const double d2 = (cloud.points[p] - cloud.points[groups.keypoints[g]]).squaredNorm();
      if (d2 < best) {
        best = d2;
        slot = g;
      }
    }
    groups.assignment[p] = slot;
    groups.member_slot[p] = -1;
  }

  return groups;
}

}  // namespace cinet

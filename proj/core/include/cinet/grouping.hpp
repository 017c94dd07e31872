#pragma once

#include "cinet/point_cloud.hpp"
#include "cinet/spatial_index.hpp"

#include <vector>

namespace cinet {

// Keypoint-centred local neighborhoods. Keypoints come from farthest point
// sampling; every group holds exactly k member indices (the keypoint's k
// nearest neighbours, the keypoint itself among them) ordered by distance
// then index. Local coordinates are member minus keypoint, which makes every
// downstream feature invariant to global translation.
struct PointGroups {
  std::vector<int> keypoints;                       // point indices, FPS order
  std::vector<std::vector<int>> members;            // n_groups x k point indices
  std::vector<std::vector<Eigen::Vector3d>> local;  // member - keypoint
  int k = 0;

  // Per cloud point: the group it reports to. Members of several groups use
  // the containing group with the nearest keypoint (tie: lowest group slot);
  // points covered by no group fall back to the nearest keypoint overall.
  std::vector<int> assignment;   // group slot per point
  std::vector<int> member_slot;  // slot inside the assigned group, -1 for non-members

  int group_count() const { return static_cast<int>(keypoints.size()); }
};

PointGroups group_points(const PointCloud& cloud, int n_groups, int k);
PointGroups group_points(const PointCloud& cloud, const SpatialIndex& index, int n_groups, int k);

}  // namespace cinet

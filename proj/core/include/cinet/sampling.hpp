#pragma once

#include "cinet/point_cloud.hpp"

#include <cstdint>
#include <vector>

namespace cinet {

// Replaces each occupied voxel by the centroid of its points. A voxel is
// floor(coord / voxel_size) per axis. Labels aggregate by majority, ties
// resolved toward defect (1). Output order is first-encounter voxel order,
// so the result is deterministic for a given input order.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

// Farthest point sampling. The first keypoint is the point farthest from the
// cloud centroid; every later keypoint maximises the minimum distance to the
// already selected set. All ties resolve to the lowest index. The seed only
// matters with randomized_start, which picks the first keypoint uniformly.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int n_samples,
                                       uint64_t seed = 0, bool randomized_start = false);

}  // namespace cinet

#pragma once

#include "cinet/point_cloud.hpp"
#include "cinet/spatial_index.hpp"

#include <cstdint>
#include <vector>

namespace cinet {

struct NormalField {
  std::vector<Eigen::Vector3d> normals;  // unit length
  int k = 0;                             // neighborhood size used
  std::vector<uint8_t> degenerate;       // 1 where the neighborhood had no plane
};

// Per-point PCA plane fit over the k nearest neighbours (the point itself
// included). The normal is the smallest-eigenvalue eigenvector, oriented to a
// non-negative dot with +Z; if that dot is zero the representative with
// non-negative x (then y) is chosen. Degenerate neighbourhoods (rank < 2,
// e.g. all points coincident) yield +Z and are flagged.
NormalField estimate_normals(const PointCloud& cloud, int k);
NormalField estimate_normals(const PointCloud& cloud, const SpatialIndex& index, int k);

}  // namespace cinet

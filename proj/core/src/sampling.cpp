#include "cinet/sampling.hpp"

#include "cinet/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace cinet {

namespace {

struct VoxelKey {
  int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint64_t v : {static_cast<uint64_t>(k.x), static_cast<uint64_t>(k.y),
                       static_cast<uint64_t>(k.z)}) {
      h ^= v;
      h *= 0x100000001b3ull;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  cloud.validate();
  if (!(voxel_size > 0.0))
    throw std::invalid_argument("voxel_downsample: voxel_size must be > 0");

  struct Cell {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    int count = 0;
    int defect = 0;
  };

  std::unordered_map<VoxelKey, int, VoxelKeyHash> slot_of;
  slot_of.reserve(cloud.size());
  std::vector<Cell> cells;  // first-encounter order
  cells.reserve(cloud.size() / 4 + 1);

  const bool labeled = cloud.has_labels();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const VoxelKey key{static_cast<int64_t>(std::floor(p.x() / voxel_size)),
                       static_cast<int64_t>(std::floor(p.y() / voxel_size)),
                       static_cast<int64_t>(std::floor(p.z() / voxel_size))};
    auto [it, inserted] = slot_of.try_emplace(key, static_cast<int>(cells.size()));
    if (inserted) cells.emplace_back();
    Cell& cell = cells[it->second];
    cell.sum += p;
    cell.count += 1;
    if (labeled && cloud.labels[i] == 1) cell.defect += 1;
  }

  PointCloud out;
  out.meta = cloud.meta;
  out.points.reserve(cells.size());
  if (labeled) out.labels.reserve(cells.size());
  for (const Cell& cell : cells) {
    out.points.push_back(cell.sum / cell.count);
    if (labeled) {
      // Majority label; an exact tie counts as defect.
      out.labels.push_back(2 * cell.defect >= cell.count ? 1 : 0);
    }
  }
  return out;
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int n_samples,
                                       uint64_t seed, bool randomized_start) {
  cloud.validate();
  const int n = static_cast<int>(cloud.size());
  if (n_samples < 1 || n_samples > n)
    throw std::invalid_argument("farthest_point_sample: n_samples must be in [1, point count]");

  std::vector<int> selected;
  selected.reserve(n_samples);

  int first = 0;
  if (randomized_start) {
    Xoshiro256pp rng(seed);
    first = static_cast<int>(rng.next_below(static_cast<uint64_t>(n)));
  } else {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : cloud.points) centroid += p;
    centroid /= n;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d2 = (cloud.points[i] - centroid).squaredNorm();
      if (d2 > best) {
        best = d2;
        first = i;
      }
    }
  }
  selected.push_back(first);

  // min_d2[i] = squared distance from i to the selected set.
  std::vector<double> min_d2(n);
  for (int i = 0; i < n; ++i)
    min_d2[i] = (cloud.points[i] - cloud.points[first]).squaredNorm();

  while (static_cast<int>(selected.size()) < n_samples) {
    int best_idx = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_d2[i] > best) {
        best = min_d2[i];
        best_idx = i;
      }
    }
    selected.push_back(best_idx);
    const Eigen::Vector3d& kp = cloud.points[best_idx];
    for (int i = 0; i < n; ++i) {
      const double d2 = (cloud.points[i] - kp).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
    }
  }
  return selected;
}

}  // namespace cinet

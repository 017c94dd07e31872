#pragma once

#include "cinet/normal_estimation.hpp"
#include "cinet/point_cloud.hpp"
#include "cinet/spatial_index.hpp"

#include <optional>
#include <vector>

namespace cinet {

// Cloud-level acquisition quality summary: mean kernel density (points per
// cubic millimeter), grid occupancy uniformity in (0, 1], and normal field
// integrity in [0, 1].
struct QualityFeature {
  double density = 0.0;
  double uniformity = 0.0;
  double integrity = 0.0;

  Eigen::Vector3d to_vector() const { return {density, uniformity, integrity}; }
};

struct KdeResult {
  std::vector<double> per_point;
  double mean = 0.0;
  double bandwidth = 0.0;
};

// Mean per-axis sample standard deviation scaled by n^(-1/7). Throws when the
// spread is zero (all points coincident) or n < 2: the bandwidth is undefined.
double scott_bandwidth(const PointCloud& cloud);

// Isotropic Gaussian kernel density at every point,
//   d(p) = 1 / (n (2*pi)^(3/2) h^3) * sum_j exp(-|p - p_j|^2 / (2 h^2)).
// The sum is truncated by a radius chosen so the omitted tail is below
// rel_tol of the always-included self term, hence of the total. Bandwidth
// nullopt selects Scott's rule.
KdeResult kde_density(const PointCloud& cloud, const SpatialIndex& index,
                      std::optional<double> bandwidth = std::nullopt, double rel_tol = 1e-7);
KdeResult kde_density(const PointCloud& cloud, std::optional<double> bandwidth = std::nullopt,
                      double rel_tol = 1e-7);

// 1 / (1 + s/m) where m, s are the mean and population standard deviation of
// per-cell point counts over the AABB partitioned into resolution cells per
// axis. Axes of zero extent collapse to a single cell so planar clouds are
// judged by their in-plane spread.
double grid_uniformity(const PointCloud& cloud, int resolution = 8);

// Mean over points of the mean absolute cosine between a point's normal and
// its k nearest neighbours' normals (the point itself excluded).
double normal_integrity(const PointCloud& cloud, const SpatialIndex& index,
                        const NormalField& normals, int k);
double normal_integrity(const PointCloud& cloud, const NormalField& normals, int k);

struct QualityConfig {
  double kde_bandwidth = 0.0;  // <= 0 selects Scott's rule
  double kde_rel_tol = 1e-7;
  int grid_resolution = 8;
  int normal_k = 16;     // neighborhood for normal estimation
  int integrity_k = 8;   // neighborhood for integrity
};

// Composes the three features with shared defaults. Points are processed in a
// canonical lexicographic order internally, so any permutation of the same
// cloud produces bit-identical features.
QualityFeature quality_vector(const PointCloud& cloud, const QualityConfig& config = {});

}  // namespace cinet

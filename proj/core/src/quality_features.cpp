#include "cinet/quality_features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cinet {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

}  // namespace

double scott_bandwidth(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n < 2) throw std::invalid_argument("scott_bandwidth: undefined for fewer than 2 points");

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) mean += p;
  mean /= static_cast<double>(n);

  Eigen::Vector3d ss = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.points) ss += (p - mean).cwiseAbs2();
  const Eigen::Vector3d sd = (ss / static_cast<double>(n - 1)).cwiseSqrt();

  const double sigma = sd.mean();
  if (!(sigma > 0.0))
    throw std::invalid_argument("scott_bandwidth: undefined, cloud has zero spread");
  return sigma * std::pow(static_cast<double>(n), -1.0 / 7.0);
}

KdeResult kde_density(const PointCloud& cloud, const SpatialIndex& index,
                      std::optional<double> bandwidth, double rel_tol) {
  cloud.validate();
  if (!(rel_tol > 0.0) || rel_tol >= 1.0)
    throw std::invalid_argument("kde_density: rel_tol must be in (0, 1)");

  const double h = bandwidth ? *bandwidth : scott_bandwidth(cloud);
  if (!(h > 0.0)) throw std::invalid_argument("kde_density: bandwidth must be > 0");

  const std::size_t n = cloud.size();
  const double inv_two_h2 = 1.0 / (2.0 * h * h);
  const double norm = 1.0 / (static_cast<double>(n) * std::pow(kTwoPi, 1.5) * h * h * h);

  // Every omitted term is below exp(-R^2 / 2h^2); with at most n of them,
  // R = h sqrt(2 ln(n / rel_tol)) keeps the omitted mass under rel_tol of the
  // self term exp(0) = 1 that every sum contains.
  const double radius =
      std::max(5.0 * h, h * std::sqrt(2.0 * std::log(static_cast<double>(n) / rel_tol)));

  KdeResult result;
  result.bandwidth = h;
  std::vector<double> acc(n, 1.0);  // self term

  std::vector<std::pair<int, double>> hits;
  for (std::size_t i = 0; i < n; ++i) {
    hits.clear();
    index.radius_squared(cloud.points[i], radius, hits);
    // Each unordered pair contributes once, accumulated to both endpoints.
    for (const auto& [j, d2] : hits) {
      if (j <= static_cast<int>(i)) continue;
      const double w = std::exp(-d2 * inv_two_h2);
      acc[i] += w;
      acc[j] += w;
    }
  }

  result.per_point.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    result.per_point[i] = norm * acc[i];
    total += result.per_point[i];
  }
  result.mean = total / static_cast<double>(n);
  return result;
}

KdeResult kde_density(const PointCloud& cloud, std::optional<double> bandwidth, double rel_tol) {
  const SpatialIndex index(cloud);
  return kde_density(cloud, index, bandwidth, rel_tol);
}

double grid_uniformity(const PointCloud& cloud, int resolution) {
  cloud.validate();
  if (resolution < 1) throw std::invalid_argument("grid_uniformity: resolution must be >= 1");

  Eigen::Vector3d lo = cloud.points.front(), hi = lo;
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d extent = hi - lo;
  const double max_extent = extent.maxCoeff();

  // Zero-extent axes hold no spread information; they contribute one cell.
  int cells_per_axis[3];
  for (int a = 0; a < 3; ++a) {
    const bool flat = max_extent <= 0.0 || extent[a] <= max_extent * 1e-12;
    cells_per_axis[a] = flat ? 1 : resolution;
  }

  const int total_cells = cells_per_axis[0] * cells_per_axis[1] * cells_per_axis[2];
  std::vector<int> counts(total_cells, 0);
  for (const auto& p : cloud.points) {
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      if (cells_per_axis[a] == 1) {
        idx[a] = 0;
      } else {
        const int c = static_cast<int>((p[a] - lo[a]) / extent[a] * cells_per_axis[a]);
        idx[a] = std::clamp(c, 0, cells_per_axis[a] - 1);
      }
    }
    counts[(idx[0] * cells_per_axis[1] + idx[1]) * cells_per_axis[2] + idx[2]] += 1;
  }

  const double m = static_cast<double>(cloud.size()) / total_cells;
  double var = 0.0;
  for (int c : counts) {
    const double d = c - m;
    var += d * d;
  }
  const double s = std::sqrt(var / total_cells);
  return 1.0 / (1.0 + s / m);
}

double normal_integrity(const PointCloud& cloud, const SpatialIndex& index,
                        const NormalField& normals, int k) {
  cloud.validate();
  if (k < 2) throw std::invalid_argument("normal_integrity: k must be >= 2");
  if (normals.normals.size() != cloud.size())
    throw std::invalid_argument("normal_integrity: normal count does not match point count");
  if (static_cast<std::size_t>(k) + 1 > cloud.size())
    throw std::invalid_argument("normal_integrity: k exceeds available neighbours");

  double sum = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto neighbors = index.knn(cloud.points[i], k + 1);
    double acc = 0.0;
    int used = 0;
    for (const auto& nb : neighbors) {
      if (nb.index == static_cast<int>(i)) continue;  // self excluded
      if (used == k) break;
      acc += std::abs(normals.normals[i].dot(normals.normals[nb.index]));
      ++used;
    }
    sum += acc / used;
  }
  return std::clamp(sum / static_cast<double>(cloud.size()), 0.0, 1.0);
}

double normal_integrity(const PointCloud& cloud, const NormalField& normals, int k) {
  const SpatialIndex index(cloud);
  return normal_integrity(cloud, index, normals, k);
}

QualityFeature quality_vector(const PointCloud& cloud, const QualityConfig& config) {
  cloud.validate();

  // Canonical point order: features must not depend on how the file happened
  // to order its rows.
  std::vector<int> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](int a, int b) {
    const auto& pa = cloud.points[a];
    const auto& pb = cloud.points[b];
    if (pa.x() != pb.x()) return pa.x() < pb.x();
    if (pa.y() != pb.y()) return pa.y() < pb.y();
    return pa.z() < pb.z();
  });

  PointCloud canon;
  canon.points.reserve(cloud.size());
  for (int i : perm) canon.points.push_back(cloud.points[i]);
  canon.meta = cloud.meta;

  const SpatialIndex index(canon);

  QualityFeature q;
  const std::optional<double> bw = config.kde_bandwidth > 0.0
                                       ? std::optional<double>(config.kde_bandwidth)
                                       : std::nullopt;
  q.density = kde_density(canon, index, bw, config.kde_rel_tol).mean;
  q.uniformity = grid_uniformity(canon, config.grid_resolution);
  const NormalField field = estimate_normals(canon, index, config.normal_k);
  q.integrity = normal_integrity(canon, index, field, config.integrity_k);
  return q;
}

}  // namespace cinet

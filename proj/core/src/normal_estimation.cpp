#include "cinet/normal_estimation.hpp"

#include <Eigen/Eigenvalues>

#include <stdexcept>

namespace cinet {

namespace {

// Orientation tie rule: the +Z dot decides, an exact-zero dot falls through
// to x then y. The tolerance absorbs eigensolver noise on axis-aligned planes.
Eigen::Vector3d orient(Eigen::Vector3d n) {
  constexpr double tie = 1e-9;
  if (n.z() < -tie) return -n;
  if (n.z() > tie) return n;
  if (n.x() < -tie) return -n;
  if (n.x() > tie) return n;
  return n.y() < 0.0 ? -n : n;
}

}  // namespace

NormalField estimate_normals(const PointCloud& cloud, const SpatialIndex& index, int k) {
  cloud.validate();
  if (k < 3) throw std::invalid_argument("estimate_normals: k must be >= 3");
  if (static_cast<std::size_t>(k) > cloud.size())
    throw std::invalid_argument("estimate_normals: k exceeds point count");

  NormalField field;
  field.k = k;
  field.normals.resize(cloud.size());
  field.degenerate.assign(cloud.size(), 0);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto neighbors = index.knn(cloud.points[i], k);

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& nb : neighbors) mean += cloud.points[nb.index];
    mean /= static_cast<double>(neighbors.size());

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& nb : neighbors) {
      const Eigen::Vector3d d = cloud.points[nb.index] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(neighbors.size());

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    if (solver.info() != Eigen::Success) {
      field.normals[i] = Eigen::Vector3d::UnitZ();
      field.degenerate[i] = 1;
      continue;
    }
    // Eigenvalues ascending; a plane needs at least two spread directions.
    const Eigen::Vector3d evals = solver.eigenvalues();
    const double scale = evals.cwiseAbs().maxCoeff();
    if (scale <= 0.0 || evals[1] <= scale * 1e-12) {
      field.normals[i] = Eigen::Vector3d::UnitZ();
      field.degenerate[i] = 1;
      continue;
    }
    field.normals[i] = orient(solver.eigenvectors().col(0).normalized());
  }
  return field;
}

NormalField estimate_normals(const PointCloud& cloud, int k) {
  const SpatialIndex index(cloud);
  return estimate_normals(cloud, index, k);
}

}  // namespace cinet

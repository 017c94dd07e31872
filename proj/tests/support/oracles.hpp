#pragma once

// Reference implementations the tests compare against. Every routine here
// takes the dumb-but-obviously-correct route: full linear scans, dense double
// loops, textbook cyclic Jacobi. None of them share code with the library.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cinet/optimizer.hpp"
#include "cinet/point_cloud.hpp"
#include "cinet/rng.hpp"

namespace oracle {

inline bool almost_equal(double a, double b, double eps = 1e-9) {
  return std::abs(a - b) <= eps;
}

// (distance^2, index) of the k nearest points: full scan, full sort. The
// pair ordering reproduces the documented tie rule (distance, then index).
inline std::vector<std::pair<double, int>> linear_knn(const std::vector<Eigen::Vector3d>& pts,
                                                      const Eigen::Vector3d& anchor, int k) {
  std::vector<std::pair<double, int>> all;
  all.reserve(pts.size());
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    all.emplace_back((pts[static_cast<std::size_t>(i)] - anchor).squaredNorm(), i);
  }
  std::sort(all.begin(), all.end());
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

// Indices with |p - anchor| <= radius, ascending.
inline std::vector<int> linear_radius(const std::vector<Eigen::Vector3d>& pts,
                                      const Eigen::Vector3d& anchor, double radius) {
  std::vector<int> out;
  const double r2 = radius * radius;
  for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
    if ((pts[static_cast<std::size_t>(i)] - anchor).squaredNorm() <= r2) out.push_back(i);
  }
  return out;
}

// Farthest point sampling restated with dense loops: first pick is the point
// farthest from the centroid, then argmax of min distance to the picked set,
// all ties to the lowest index.
inline std::vector<int> brute_fps(const std::vector<Eigen::Vector3d>& pts, int n_samples) {
  const int n = static_cast<int>(pts.size());
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(n);

  int first = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[static_cast<std::size_t>(i)] - centroid).squaredNorm();
    if (d > best) {
      best = d;
      first = i;
    }
  }

  std::vector<int> picked = {first};
  std::vector<double> min_d(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    min_d[static_cast<std::size_t>(i)] =
        (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(first)]).squaredNorm();
  }
  while (static_cast<int>(picked.size()) < n_samples) {
    int arg = 0;
    best = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_d[static_cast<std::size_t>(i)] > best) {
        best = min_d[static_cast<std::size_t>(i)];
        arg = i;
      }
    }
    picked.push_back(arg);
    for (int i = 0; i < n; ++i) {
      const double d =
          (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(arg)]).squaredNorm();
      min_d[static_cast<std::size_t>(i)] = std::min(min_d[static_cast<std::size_t>(i)], d);
    }
  }
  return picked;
}

// O(n^2) isotropic Gaussian kernel density, no truncation.
inline std::vector<double> dense_kde(const std::vector<Eigen::Vector3d>& pts, double h) {
  const double n = static_cast<double>(pts.size());
  const double norm = 1.0 / (n * std::pow(2.0 * M_PI, 1.5) * h * h * h);
  std::vector<double> out(pts.size(), 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      s += std::exp(-(pts[i] - pts[j]).squaredNorm() / (2.0 * h * h));
    }
    out[i] = norm * s;
  }
  return out;
}

// Cyclic Jacobi for a symmetric 3x3 matrix. Eigenvalues ascending, matching
// eigenvectors as columns.
inline void jacobi3(Eigen::Matrix3d a, Eigen::Vector3d& values, Eigen::Matrix3d& vectors) {
  vectors.setIdentity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
        r(p, p) = c;
        r(q, q) = c;
        r(p, q) = s;
        r(q, p) = -s;
        a = (r.transpose() * a * r).eval();
        vectors = (vectors * r).eval();
      }
    }
  }
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a(x, x) < a(y, y); });
  Eigen::Vector3d val;
  Eigen::Matrix3d vec;
  for (int i = 0; i < 3; ++i) {
    val(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    vec.col(i) = vectors.col(order[static_cast<std::size_t>(i)]);
  }
  values = val;
  vectors = vec;
}

// Central finite differences against gradients already accumulated in the
// parameters (run the graph and backward first). Relative error uses
// |fd - an| / max(|fd| + |an|, floor); stride subsamples large parameters.
struct FdResult {
  double max_rel = 0.0;
  int checked = 0;
  std::string worst;
};

inline FdResult fd_check(const std::function<double()>& f,
                         const std::vector<cinet::Parameter*>& params, double h = 1e-5,
                         int stride = 1, double floor = 1e-6) {
  FdResult r;
  for (cinet::Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.data.size(); i += static_cast<std::size_t>(stride)) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      const double fp = f();
      p->value.data[i] = saved - h;
      const double fm = f();
      p->value.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = p->grad.data[i];
      const double rel = std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), floor);
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

inline cinet::PointCloud random_cloud(int n, std::uint64_t seed, double extent = 1.0) {
  cinet::Xoshiro256pp rng(seed);
  cinet::PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    cloud.points.emplace_back(rng.uniform(0.0, extent), rng.uniform(0.0, extent),
                              rng.uniform(0.0, extent));
  }
  return cloud;
}

}  // namespace oracle

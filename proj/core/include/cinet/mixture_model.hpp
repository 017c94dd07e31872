#pragma once

#include "cinet/quality_features.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cinet {

// Full-covariance Gaussian mixture over 3D quality features. Fitting happens
// in the standardized (z-scored) feature space; the transform travels with
// the model so densities can be queried with raw features. A model with K = 0
// carries only the standardizer (used by the raw-vector ablation).
struct GmmModel {
  int K = 0;
  std::vector<double> weights;                // simplex
  std::vector<Eigen::Vector3d> means;         // standardized space
  std::vector<Eigen::Matrix3d> covariances;   // SPD, min eigenvalue >= floor
  Eigen::Vector3d standardize_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d standardize_scale = Eigen::Vector3d::Ones();

  double final_log_likelihood = 0.0;
  int iterations = 0;
  std::vector<double> log_likelihood_trace;   // nondecreasing within 1e-9

  Eigen::Vector3d standardize(const Eigen::Vector3d& c) const {
    return (c - standardize_mean).cwiseQuotient(standardize_scale);
  }
  Eigen::Vector3d unstandardize(const Eigen::Vector3d& z) const {
    return z.cwiseProduct(standardize_scale) + standardize_mean;
  }
};

struct GmmFitOptions {
  double tol = 1e-6;        // relative log-likelihood improvement
  int max_iter = 200;
  uint64_t seed = 0;
  double cov_floor = 1e-6;  // added to covariance diagonals every M-step
};

// EM in the space the samples are given in (no standardization applied).
// Seeding is k-means++ style on the samples. Throws when K exceeds the sample
// count or all samples coincide.
GmmModel gmm_fit(const std::vector<Eigen::Vector3d>& samples, int K,
                 const GmmFitOptions& options = {});

// Z-scores the samples, fits, and stores the transform in the model.
// Components of zero spread get unit scale so masking features stays safe.
GmmModel gmm_fit_standardized(const std::vector<Eigen::Vector3d>& samples, int K,
                              const GmmFitOptions& options = {});

// Standardizer-only model (K = 0); gmm_log_density is undefined for it.
GmmModel standardizer_only(const std::vector<Eigen::Vector3d>& samples);

// Mixture density of the standardized coordinate of c. Computed in log space.
double gmm_density(const GmmModel& model, const Eigen::Vector3d& c);
double gmm_log_density(const GmmModel& model, const Eigen::Vector3d& c);

// Same, for a point already in standardized space.
double gmm_log_density_standardized(const GmmModel& model, const Eigen::Vector3d& z);

// Posterior component responsibilities at c; sums to 1 within 1e-12.
std::vector<double> gmm_responsibilities(const GmmModel& model, const Eigen::Vector3d& c);

// Fits K = 1..K_max (three seeds each, best likelihood kept) and returns the
// K minimising BIC = -2 logL + p ln n with p = K(1 + 3 + 6) - 1. A flat BIC
// landscape (max - min < 2) falls back to min(3, K_max).
int select_components_bic(const std::vector<Eigen::Vector3d>& samples, int K_max,
                          const GmmFitOptions& options = {});

// Plain-text persistence; values carry 17 significant digits so a load
// reproduces the model bit for bit. The stream forms let other formats embed
// a gmm block (context names the source in error messages).
void write_gmm(std::ostream& out, const GmmModel& model);
GmmModel read_gmm(std::istream& in, const std::string& context);
void save_gmm(const GmmModel& model, const std::string& path);
GmmModel load_gmm(const std::string& path);

}  // namespace cinet

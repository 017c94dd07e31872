#include "cinet/mixture_model.hpp"

#include "cinet/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cinet {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2*pi)

struct ComponentCache {
  Eigen::Matrix3d chol_lower;
  double log_det = 0.0;  // ln det(Sigma)
};

ComponentCache cache_component(const Eigen::Matrix3d& cov) {
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("mixture_model: covariance not positive definite");
  ComponentCache cache;
  cache.chol_lower = llt.matrixL();
  cache.log_det = 2.0 * cache.chol_lower.diagonal().array().log().sum();
  return cache;
}

double log_gaussian(const ComponentCache& cache, const Eigen::Vector3d& mean,
                    const Eigen::Vector3d& x) {
  const Eigen::Vector3d w =
      cache.chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (3.0 * kLogTwoPi + cache.log_det + w.squaredNorm());
}

double log_sum_exp(const double* vals, int n) {
  double m = vals[0];
  for (int i = 1; i < n; ++i) m = std::max(m, vals[i]);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(vals[i] - m);
  return m + std::log(acc);
}

// k-means++ style: first center uniform, later centers proportional to the
// squared distance to the nearest chosen center.
std::vector<Eigen::Vector3d> seed_means(const std::vector<Eigen::Vector3d>& samples, int K,
                                        Xoshiro256pp& rng) {
  const int n = static_cast<int>(samples.size());
  std::vector<Eigen::Vector3d> centers;
  centers.reserve(K);
  std::vector<char> taken(n, 0);

  const int first = static_cast<int>(rng.next_below(static_cast<uint64_t>(n)));
  centers.push_back(samples[first]);
  taken[first] = 1;

  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = (samples[i] - centers[0]).squaredNorm();

  while (static_cast<int>(centers.size()) < K) {
    double total = 0.0;
    for (double v : d2) total += v;
    int pick = -1;
    if (total > 0.0) {
      const double target = rng.next_double() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = n - 1;
    } else {
      // Every sample coincides with a center; take the lowest untaken index.
      for (int i = 0; i < n; ++i) {
        if (!taken[i]) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = 0;
    }
    taken[pick] = 1;
    centers.push_back(samples[pick]);
    for (int i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (samples[i] - centers.back()).squaredNorm());
  }
  return centers;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

GmmModel gmm_fit(const std::vector<Eigen::Vector3d>& samples, int K,
                 const GmmFitOptions& options) {
  const int n = static_cast<int>(samples.size());
  if (K < 1) throw std::invalid_argument("gmm_fit: K must be >= 1");
  if (K > n) throw std::invalid_argument("gmm_fit: K exceeds sample count");

  bool all_identical = true;
  for (const auto& s : samples) {
    if (s != samples.front()) {
      all_identical = false;
      break;
    }
  }
  if (all_identical)
    throw std::invalid_argument("gmm_fit: degenerate input, all samples identical");

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& s : samples) mean += s;
  mean /= n;
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& s : samples) {
    const Eigen::Vector3d d = s - mean;
    scatter += d * d.transpose();
  }
  scatter /= n;

  GmmModel model;
  model.K = K;
  Xoshiro256pp rng(options.seed);
  model.means = seed_means(samples, K, rng);
  model.weights.assign(K, 1.0 / K);
  model.covariances.assign(K, scatter + options.cov_floor * Eigen::Matrix3d::Identity());

  Eigen::MatrixXd resp(n, K);
  std::vector<double> logp(K);
  double prev_ll = -std::numeric_limits<double>::infinity();

  auto expectation = [&](bool fill_resp) {
    std::vector<ComponentCache> caches(K);
    std::vector<double> log_w(K);
    for (int k = 0; k < K; ++k) {
      caches[k] = cache_component(model.covariances[k]);
      log_w[k] = std::log(model.weights[k]);
    }
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k)
        logp[k] = log_w[k] + log_gaussian(caches[k], model.means[k], samples[i]);
      const double lse = log_sum_exp(logp.data(), K);
      ll += lse;
      if (fill_resp)
        for (int k = 0; k < K; ++k) resp(i, k) = std::exp(logp[k] - lse);
    }
    return ll;
  };

  for (int iter = 0; iter < options.max_iter; ++iter) {
    const double ll = expectation(true);
    model.log_likelihood_trace.push_back(ll);
    model.iterations = iter + 1;

    const bool converged =
        iter > 0 && std::abs(ll - prev_ll) < options.tol * std::max(std::abs(prev_ll), 1e-12);
    prev_ll = ll;
    if (converged) break;

    for (int k = 0; k < K; ++k) {
      const double nk = resp.col(k).sum();
      if (nk < 1e-10) {
        // Dead component: freeze it rather than divide by ~zero.
        model.weights[k] = nk / n;
        continue;
      }
      Eigen::Vector3d mu = Eigen::Vector3d::Zero();
      for (int i = 0; i < n; ++i) mu += resp(i, k) * samples[i];
      mu /= nk;
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d d = samples[i] - mu;
        cov += resp(i, k) * (d * d.transpose());
      }
      cov /= nk;
      model.means[k] = mu;
      model.covariances[k] = cov + options.cov_floor * Eigen::Matrix3d::Identity();
      model.weights[k] = nk / n;
    }
  }

  model.final_log_likelihood = expectation(false);
  model.log_likelihood_trace.push_back(model.final_log_likelihood);
  return model;
}

GmmModel gmm_fit_standardized(const std::vector<Eigen::Vector3d>& samples, int K,
                              const GmmFitOptions& options) {
  GmmModel scaler = standardizer_only(samples);
  std::vector<Eigen::Vector3d> z(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) z[i] = scaler.standardize(samples[i]);

  GmmModel model = gmm_fit(z, K, options);
  model.standardize_mean = scaler.standardize_mean;
  model.standardize_scale = scaler.standardize_scale;
  return model;
}

GmmModel standardizer_only(const std::vector<Eigen::Vector3d>& samples) {
  if (samples.empty()) throw std::invalid_argument("standardizer_only: no samples");
  GmmModel model;
  model.K = 0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Eigen::Vector3d var = Eigen::Vector3d::Zero();
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size());
  model.standardize_mean = mean;
  for (int a = 0; a < 3; ++a) {
    const double sd = std::sqrt(var[a]);
    // Constant features (e.g. masked ones) keep unit scale.
    model.standardize_scale[a] = sd > 1e-12 ? sd : 1.0;
  }
  return model;
}

double gmm_log_density_standardized(const GmmModel& model, const Eigen::Vector3d& z) {
  if (model.K < 1) throw std::invalid_argument("gmm_log_density: model has no components");
  std::vector<double> logp(model.K);
  for (int k = 0; k < model.K; ++k) {
    const ComponentCache cache = cache_component(model.covariances[k]);
    logp[k] = std::log(model.weights[k]) + log_gaussian(cache, model.means[k], z);
  }
  return log_sum_exp(logp.data(), model.K);
}

double gmm_log_density(const GmmModel& model, const Eigen::Vector3d& c) {
  return gmm_log_density_standardized(model, model.standardize(c));
}

double gmm_density(const GmmModel& model, const Eigen::Vector3d& c) {
  return std::exp(gmm_log_density(model, c));
}

std::vector<double> gmm_responsibilities(const GmmModel& model, const Eigen::Vector3d& c) {
  if (model.K < 1) throw std::invalid_argument("gmm_responsibilities: model has no components");
  const Eigen::Vector3d z = model.standardize(c);
  std::vector<double> logp(model.K);
  for (int k = 0; k < model.K; ++k) {
    const ComponentCache cache = cache_component(model.covariances[k]);
    logp[k] = std::log(model.weights[k]) + log_gaussian(cache, model.means[k], z);
  }
  const double lse = log_sum_exp(logp.data(), model.K);
  std::vector<double> gamma(model.K);
  double total = 0.0;
  for (int k = 0; k < model.K; ++k) {
    gamma[k] = std::exp(logp[k] - lse);
    total += gamma[k];
  }
  for (double& g : gamma) g /= total;
  return gamma;
}

int select_components_bic(const std::vector<Eigen::Vector3d>& samples, int K_max,
                          const GmmFitOptions& options) {
  if (K_max < 1) throw std::invalid_argument("select_components_bic: K_max must be >= 1");
  const int n = static_cast<int>(samples.size());
  const int feasible = std::min(K_max, n);

  std::vector<double> bic;
  for (int K = 1; K <= feasible; ++K) {
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 3; ++trial) {
      GmmFitOptions opt = options;
      opt.seed = derive_seed(options.seed, static_cast<uint64_t>((K - 1) * 3 + trial));
      const GmmModel m = gmm_fit(samples, K, opt);
      best_ll = std::max(best_ll, m.final_log_likelihood);
    }
    // Free parameters: K weights minus the simplex constraint, 3 mean and 6
    // covariance entries per component.
    const double p = K * 10.0 - 1.0;
    bic.push_back(-2.0 * best_ll + p * std::log(static_cast<double>(n)));
  }

  const auto [lo, hi] = std::minmax_element(bic.begin(), bic.end());
  if (*hi - *lo < 2.0) return std::min(3, feasible);
  return static_cast<int>(lo - bic.begin()) + 1;
}

void write_gmm(std::ostream& out, const GmmModel& model) {
  out << "cinet-gmm v1\n";
  out << "K " << model.K << '\n';
  out << "standardize_mean";
  for (int a = 0; a < 3; ++a) out << ' ' << fmt(model.standardize_mean[a]);
  out << "\nstandardize_scale";
  for (int a = 0; a < 3; ++a) out << ' ' << fmt(model.standardize_scale[a]);
  out << '\n';
  for (int k = 0; k < model.K; ++k) {
    out << "component " << k << '\n';
    out << "weight " << fmt(model.weights[k]) << '\n';
    out << "mean";
    for (int a = 0; a < 3; ++a) out << ' ' << fmt(model.means[k][a]);
    out << "\ncov";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << ' ' << fmt(model.covariances[k](r, c));
    out << '\n';
  }
  out << "final_log_likelihood " << fmt(model.final_log_likelihood) << '\n';
  out << "iterations " << model.iterations << '\n';
}

GmmModel read_gmm(std::istream& in, const std::string& context) {
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want)
      throw std::runtime_error("read_gmm: malformed " + context + ", expected '" + want + "'");
  };

  std::string magic, version;
  in >> magic >> version;
  if (magic != "cinet-gmm" || version != "v1")
    throw std::runtime_error("read_gmm: " + context + " is not a cinet gmm block");

  GmmModel model;
  expect("K");
  in >> model.K;
  if (!in || model.K < 0) throw std::runtime_error("read_gmm: bad component count in " + context);
  expect("standardize_mean");
  for (int a = 0; a < 3; ++a) in >> model.standardize_mean[a];
  expect("standardize_scale");
  for (int a = 0; a < 3; ++a) in >> model.standardize_scale[a];

  model.weights.resize(model.K);
  model.means.resize(model.K);
  model.covariances.resize(model.K);
  for (int k = 0; k < model.K; ++k) {
    expect("component");
    int idx = -1;
    in >> idx;
    if (idx != k) throw std::runtime_error("read_gmm: component order mismatch in " + context);
    expect("weight");
    in >> model.weights[k];
    expect("mean");
    for (int a = 0; a < 3; ++a) in >> model.means[k][a];
    expect("cov");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) in >> model.covariances[k](r, c);
  }
  expect("final_log_likelihood");
  in >> model.final_log_likelihood;
  expect("iterations");
  in >> model.iterations;
  if (!in) throw std::runtime_error("read_gmm: truncated " + context);
  return model;
}

void save_gmm(const GmmModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_gmm: cannot open '" + path + "' for writing");
  write_gmm(out, model);
  if (!out) throw std::runtime_error("save_gmm: write failed for '" + path + "'");
}

GmmModel load_gmm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_gmm: cannot open '" + path + "'");
  return read_gmm(in, "file '" + path + "'");
}

}  // namespace cinet

#include "cinet/training.hpp"

#include "cinet/parallel.hpp"
#include "cinet/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace cinet {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("train config: lr must be >= 0");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (positive_weight < 0) throw std::invalid_argument("train config: positive_weight must be >= 0");
  if (patience < 0) throw std::invalid_argument("train config: patience must be >= 0");
  model.validate();
}

TrainConfig train_config_from_ini(const IniConfig& ini) {
  TrainConfig c;
  c.lr = ini.get_double("lr", c.lr);
  c.epochs = ini.get_int("epochs", c.epochs);
  c.batch_size = ini.get_int("batch_size", c.batch_size);
  c.seed = ini.get_uint64("seed", c.seed);
  c.positive_weight = ini.get_double("positive_weight", c.positive_weight);
  c.patience = ini.get_int("patience", c.patience);

  ModelConfig& m = c.model;
  m.encoder.d_model = ini.get_int("model.d_model", m.encoder.d_model);
  m.encoder.layers = ini.get_int("model.layers", m.encoder.layers);
  m.encoder.heads = ini.get_int("model.heads", m.encoder.heads);
  m.encoder.d_ff = ini.get_int("model.d_ff", m.encoder.d_ff);
  m.d_latent = ini.get_int("model.d_latent", m.d_latent);
  m.n_groups = ini.get_int("model.n_groups", m.n_groups);
  m.group_k = ini.get_int("model.group_k", m.group_k);
  m.gmm_components = ini.get_int("model.gmm_components", m.gmm_components);
  m.gmm_k_max = ini.get_int("model.gmm_k_max", m.gmm_k_max);
  m.sr = sr_variant_from(ini.get_string("model.sr", to_string(m.sr)));
  m.qa = qa_variant_from(ini.get_string("model.qa", to_string(m.qa)));
  m.fusion = fusion_variant_from(ini.get_string("model.fusion", to_string(m.fusion)));
  m.intervention =
      intervention_mode_from(ini.get_string("model.intervention", to_string(m.intervention)));
  m.feature_mask[0] = ini.get_bool("model.use_density", m.feature_mask[0]);
  m.feature_mask[1] = ini.get_bool("model.use_uniformity", m.feature_mask[1]);
  m.feature_mask[2] = ini.get_bool("model.use_integrity", m.feature_mask[2]);
  m.quality.kde_bandwidth = ini.get_double("quality.kde_bandwidth", m.quality.kde_bandwidth);
  m.quality.kde_rel_tol = ini.get_double("quality.kde_rel_tol", m.quality.kde_rel_tol);
  m.quality.grid_resolution = ini.get_int("quality.grid_resolution", m.quality.grid_resolution);
  m.quality.normal_k = ini.get_int("quality.normal_k", m.quality.normal_k);
  m.quality.integrity_k = ini.get_int("quality.integrity_k", m.quality.integrity_k);
  return c;
}

std::string train_config_to_ini(const TrainConfig& c) {
  std::string out;
  out += "lr = " + fmt(c.lr) + "\n";
  out += "epochs = " + std::to_string(c.epochs) + "\n";
  out += "batch_size = " + std::to_string(c.batch_size) + "\n";
  out += "seed = " + std::to_string(c.seed) + "\n";
  out += "positive_weight = " + fmt(c.positive_weight) + "\n";
  out += "patience = " + std::to_string(c.patience) + "\n";
  out += "\n[model]\n";
  out += "d_model = " + std::to_string(c.model.encoder.d_model) + "\n";
  out += "layers = " + std::to_string(c.model.encoder.layers) + "\n";
  out += "heads = " + std::to_string(c.model.encoder.heads) + "\n";
  out += "d_ff = " + std::to_string(c.model.encoder.d_ff) + "\n";
  out += "d_latent = " + std::to_string(c.model.d_latent) + "\n";
  out += "n_groups = " + std::to_string(c.model.n_groups) + "\n";
  out += "group_k = " + std::to_string(c.model.group_k) + "\n";
  out += "gmm_components = " + std::to_string(c.model.gmm_components) + "\n";
  out += "gmm_k_max = " + std::to_string(c.model.gmm_k_max) + "\n";
  out += "sr = " + to_string(c.model.sr) + "\n";
  out += "qa = " + to_string(c.model.qa) + "\n";
  out += "fusion = " + to_string(c.model.fusion) + "\n";
  out += "intervention = " + to_string(c.model.intervention) + "\n";
  out += "use_density = " + std::string(c.model.feature_mask[0] ? "true" : "false") + "\n";
  out += "use_uniformity = " + std::string(c.model.feature_mask[1] ? "true" : "false") + "\n";
  out += "use_integrity = " + std::string(c.model.feature_mask[2] ? "true" : "false") + "\n";
  out += "\n[quality]\n";
  out += "kde_bandwidth = " + fmt(c.model.quality.kde_bandwidth) + "\n";
  out += "kde_rel_tol = " + fmt(c.model.quality.kde_rel_tol) + "\n";
  out += "grid_resolution = " + std::to_string(c.model.quality.grid_resolution) + "\n";
  out += "normal_k = " + std::to_string(c.model.quality.normal_k) + "\n";
  out += "integrity_k = " + std::to_string(c.model.quality.integrity_k) + "\n";
  return out;
}

Var compute_loss(Tape& tape, Var probabilities, const std::vector<std::uint8_t>& labels,
                 double positive_weight) {
  const int n = probabilities.rows();
  if (probabilities.cols() != 1) {
    throw std::invalid_argument("compute_loss: probabilities must be a column");
  }
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("compute_loss: " + std::to_string(n) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (positive_weight <= 0) {
    throw std::invalid_argument("compute_loss: positive_weight must be positive");
  }

  Tensor y = Tensor::zeros(n, 1);
  Tensor y_inv = Tensor::zeros(n, 1);
  Tensor w = Tensor::zeros(n, 1);
  for (int i = 0; i < n; ++i) {
    const double yi = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    y(i, 0) = yi;
    y_inv(i, 0) = 1.0 - yi;
    w(i, 0) = yi > 0 ? positive_weight : 1.0;
  }

  constexpr double eps = 1e-15;
  Var vy = tape.input(std::move(y));
  Var vy_inv = tape.input(std::move(y_inv));
  Var vw = tape.input(std::move(w));
  Var log_p = tape.log(tape.add_scalar(probabilities, eps));
  Var log_1mp = tape.log(tape.add_scalar(tape.mul_scalar(probabilities, -1.0), 1.0 + eps));
  Var ll = tape.add(tape.mul(vy, log_p), tape.mul(vy_inv, log_1mp));
  return tape.mul_scalar(tape.mean_all(tape.mul(vw, ll)), -1.0);
}

std::vector<PreparedCloud> prepare_set(const std::vector<LabeledCloud>& clouds,
                                       const ModelConfig& config, int jobs) {
  std::vector<PreparedCloud> prepared(clouds.size());
  parallel_for(static_cast<int>(clouds.size()), jobs, [&](int i) {
    const auto idx = static_cast<std::size_t>(i);
    prepared[idx].id = clouds[idx].id;
    prepared[idx].cloud = &clouds[idx].cloud;
    prepared[idx].geometry = prepare_cloud(clouds[idx].cloud, config);
  });
  return prepared;
}

namespace {

MetricsReport evaluate_impl(const std::vector<PreparedCloud>& set, CINetModel& model) {
  if (set.empty()) throw std::invalid_argument("evaluate: no clouds");
  std::vector<ConfusionCounts> counts;
  std::vector<std::string> ids;
  for (const PreparedCloud& pc : set) {
    if (!pc.cloud->has_labels()) {
      throw std::invalid_argument("evaluate: cloud '" + pc.id + "' has no labels");
    }
    const PointPrediction prediction = intervene_predict(model, pc.geometry);
    std::vector<std::uint8_t> pred(prediction.probabilities.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = prediction.probabilities[i] > 0.5 ? 1 : 0;
    }
    counts.push_back(confusion_counts(pred, pc.cloud->labels));
    ids.push_back(pc.id);
  }
  return report(counts, ids);
}

double batch_positive_weight(const std::vector<PreparedCloud>& set,
                             const std::vector<int>& batch, double configured) {
  if (configured > 0) return configured;
  std::int64_t pos = 0, neg = 0;
  for (int idx : batch) {
    for (std::uint8_t label : set[static_cast<std::size_t>(idx)].cloud->labels) {
      (label ? pos : neg) += 1;
    }
  }
  if (pos == 0) return 1.0;
  return std::clamp(static_cast<double>(neg) / static_cast<double>(pos), 1.0, 1000.0);
}

}  // namespace

std::pair<CINetModel, TrainReport> train_prepared(const std::vector<PreparedCloud>& train_set,
                                                  const std::vector<PreparedCloud>& val_set,
                                                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
  for (const PreparedCloud& pc : train_set) {
    if (!pc.cloud->has_labels()) {
      throw std::invalid_argument("train: training cloud '" + pc.id + "' has no labels");
    }
  }

  const auto start = std::chrono::steady_clock::now();

  // Quality statistics over the training corpus: the mask-fill means come
  // from raw features; the mixture is fit on mask-applied vectors so masked
  // dimensions collapse to constants.
  std::array<double, 3> fill = {0.0, 0.0, 0.0};
  for (const PreparedCloud& pc : train_set) {
    for (int a = 0; a < 3; ++a) fill[static_cast<std::size_t>(a)] += pc.geometry.quality[a];
  }
  for (double& f : fill) f /= static_cast<double>(train_set.size());

  std::vector<Eigen::Vector3d> samples;
  samples.reserve(train_set.size());
  for (const PreparedCloud& pc : train_set) {
    Eigen::Vector3d c = pc.geometry.quality;
    for (int a = 0; a < 3; ++a) {
      if (!config.model.feature_mask[static_cast<std::size_t>(a)]) {
        c[a] = fill[static_cast<std::size_t>(a)];
      }
    }
    samples.push_back(c);
  }

  CINetModel model = CINetModel::init(config.model, derive_seed(config.seed, 20));
  model.feature_fill = fill;
  if (config.model.qa == QaVariant::gmm) {
    GmmFitOptions options;
    options.seed = derive_seed(config.seed, 10);
    int K = config.model.gmm_components;
    if (K == 0) {
      const int k_max = std::min(config.model.gmm_k_max, static_cast<int>(samples.size()));
      K = select_components_bic(samples, k_max, options);
    }
    model.gmm = gmm_fit_standardized(samples, K, options);
  } else {
    model.gmm = standardizer_only(samples);
  }
  model.trained = true;

  Adam adam(model.parameters(), AdamConfig{.lr = config.lr});

  TrainReport report;
  CINetModel best = model;
  double best_miou = -std::numeric_limits<double>::infinity();
  int best_epoch = -1;

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Xoshiro256pp shuffle_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const double weight = batch_positive_weight(train_set, batch, config.positive_weight);
      const double inv_batch = 1.0 / static_cast<double>(batch.size());

      adam.zero_grad();
      for (int idx : batch) {
        const PreparedCloud& pc = train_set[static_cast<std::size_t>(idx)];
        Tape tape;
        ForwardVars fwd = model_forward(tape, model, pc.geometry);
        Var loss = compute_loss(tape, fwd.probabilities, pc.cloud->labels, weight);
        loss_sum += loss.value()(0, 0);
        tape.backward(tape.mul_scalar(loss, inv_batch));
      }
      adam.step();
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(train_set.size()));

    const double val_miou = evaluate_impl(val_set, model).miou;
    report.val_miou.push_back(val_miou);
    if (val_miou > best_miou) {
      best_miou = val_miou;
      best_epoch = epoch;
      best = model;
    }
    if (config.patience > 0 && epoch - best_epoch >= config.patience) break;
  }

  report.best_val_miou = best_miou;
  report.best_epoch = best_epoch;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(best), std::move(report)};
}

std::pair<CINetModel, TrainReport> train(const std::vector<LabeledCloud>& train_set,
                                         const std::vector<LabeledCloud>& val_set,
                                         const TrainConfig& config, int jobs) {
  const std::vector<PreparedCloud> train_prep = prepare_set(train_set, config.model, jobs);
  const std::vector<PreparedCloud> val_prep = prepare_set(val_set, config.model, jobs);
  return train_prepared(train_prep, val_prep, config);
}

MetricsReport evaluate_prepared(const std::vector<PreparedCloud>& test_set, CINetModel& model) {
  return evaluate_impl(test_set, model);
}

MetricsReport evaluate(const std::vector<LabeledCloud>& test_set, CINetModel& model, int jobs) {
  const std::vector<PreparedCloud> prepared = prepare_set(test_set, model.config, jobs);
  return evaluate_impl(prepared, model);
}

}  // namespace cinet

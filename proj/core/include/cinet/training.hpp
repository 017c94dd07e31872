#pragma once

#include "cinet/dataset.hpp"
#include "cinet/intervention.hpp"
#include "cinet/metrics.hpp"
#include "cinet/model.hpp"
#include "cinet/tape.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cinet {

struct TrainConfig {
  double lr = 0.01;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // 0 selects the per-batch rule clamp(negatives / positives, 1, 1000).
  double positive_weight = 0.0;
  // 0 disables early stopping; otherwise stop after this many epochs without
  // a validation mIoU improvement.
  int patience = 0;
  ModelConfig model;

  void validate() const;
};

TrainConfig train_config_from_ini(const IniConfig& ini);
std::string train_config_to_ini(const TrainConfig& config);

struct TrainReport {
  std::vector<double> train_loss;  // one entry per completed epoch
  std::vector<double> val_miou;
  double best_val_miou = 0.0;
  int best_epoch = -1;  // 0-based
  double wall_seconds = 0.0;
};

// Weighted binary cross-entropy over per-point probabilities: mean of
// w_i * (-y log(p + eps) - (1 - y) log(1 - p + eps)) with eps = 1e-15 and
// w_i = positive_weight for defect points, 1 otherwise.
Var compute_loss(Tape& tape, Var probabilities, const std::vector<std::uint8_t>& labels,
                 double positive_weight);

// Cloud with its weight-independent preprocessing attached, so grouping and
// quality extraction run once per cloud and are shared across epochs and
// ablation variants.
struct PreparedCloud {
  std::string id;
  const PointCloud* cloud = nullptr;
  CloudGeometry geometry;
};

std::vector<PreparedCloud> prepare_set(const std::vector<LabeledCloud>& clouds,
                                       const ModelConfig& config, int jobs = 1);

std::pair<CINetModel, TrainReport> train(const std::vector<LabeledCloud>& train_set,
                                         const std::vector<LabeledCloud>& val_set,
                                         const TrainConfig& config, int jobs = 1);

std::pair<CINetModel, TrainReport> train_prepared(const std::vector<PreparedCloud>& train_set,
                                                  const std::vector<PreparedCloud>& val_set,
                                                  const TrainConfig& config);

MetricsReport evaluate(const std::vector<LabeledCloud>& test_set, CINetModel& model, int jobs = 1);
MetricsReport evaluate_prepared(const std::vector<PreparedCloud>& test_set, CINetModel& model);

}  // namespace cinet

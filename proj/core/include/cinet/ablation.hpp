#pragma once

#include "cinet/dataset.hpp"
#include "cinet/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cinet {

// One ablation variant: a named delta on the base configuration.
struct AblationVariant {
  std::string name;
  SrVariant sr;
  QaVariant qa;
  FusionVariant fusion;
  std::array<bool, 3> feature_mask;
};

// The default suite: the module ladder (baseline = mlp + raw-vector +
// concat, each module enabled alone, the full model) plus the seven
// nonempty quality-feature masks applied to the full model. 12 variants.
std::vector<AblationVariant> default_ablation_suite();

struct AblationRow {
  std::string name;
  std::vector<double> seed_miou;  // per seed, test split, micro mIoU
  double miou_mean = 0.0;
  double miou_sd = 0.0;  // sample standard deviation, 0 for a single seed
  double map_mean = 0.0;
  double macc_mean = 0.0;
  double oa_mean = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
};

AblationResult run_ablation(const DatasetSplits& data, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, int jobs = 1);

// Same grid over a caller-chosen variant list (a subset of the default suite
// or custom deltas).
AblationResult run_ablation(const DatasetSplits& data, const TrainConfig& base,
                            const std::vector<AblationVariant>& suite,
                            const std::vector<std::uint64_t>& seeds, int jobs = 1);

std::string ablation_to_csv(const AblationResult& result);
std::string ablation_to_markdown(const AblationResult& result);

}  // namespace cinet

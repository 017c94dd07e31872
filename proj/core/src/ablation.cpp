#include "cinet/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cinet/parallel.hpp"

namespace cinet {

namespace {

std::string fmt(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

constexpr std::array<bool, 3> kAllFeatures = {true, true, true};

}  // namespace

std::vector<AblationVariant> default_ablation_suite() {
  std::vector<AblationVariant> suite;
  suite.push_back({"baseline", SrVariant::mlp, QaVariant::raw_vector, FusionVariant::concat,
                   kAllFeatures});
  suite.push_back({"sr-only", SrVariant::transformer, QaVariant::raw_vector,
                   FusionVariant::concat, kAllFeatures});
  suite.push_back({"qa-only", SrVariant::mlp, QaVariant::gmm, FusionVariant::concat,
                   kAllFeatures});
  suite.push_back({"mad-only", SrVariant::mlp, QaVariant::raw_vector, FusionVariant::attention,
                   kAllFeatures});
  suite.push_back({"full", SrVariant::transformer, QaVariant::gmm, FusionVariant::attention,
                   kAllFeatures});

  const char* names[3] = {"density", "uniformity", "integrity"};
  for (int bits = 1; bits < 8; ++bits) {
    std::array<bool, 3> mask{};
    std::string name = "mask:";
    bool first = true;
    for (int f = 0; f < 3; ++f) {
      mask[static_cast<std::size_t>(f)] = (bits >> f) & 1;
      if (mask[static_cast<std::size_t>(f)]) {
        if (!first) name += "+";
        name += names[f];
        first = false;
      }
    }
    suite.push_back({name, SrVariant::transformer, QaVariant::gmm, FusionVariant::attention,
                     mask});
  }
  return suite;
}

AblationResult run_ablation(const DatasetSplits& data, const TrainConfig& base,
                            const std::vector<std::uint64_t>& seeds, int jobs) {
  return run_ablation(data, base, default_ablation_suite(), seeds, jobs);
}

AblationResult run_ablation(const DatasetSplits& data, const TrainConfig& base,
                            const std::vector<AblationVariant>& suite,
                            const std::vector<std::uint64_t>& seeds, int jobs) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: need at least one seed");
  if (suite.empty()) throw std::invalid_argument("run_ablation: empty variant suite");

  // Grouping and quality extraction do not depend on the variant flags, so
  // one prepared set serves every row and seed.
  const std::vector<PreparedCloud> train_prep = prepare_set(data.train, base.model, jobs);
  const std::vector<PreparedCloud> val_prep = prepare_set(data.val, base.model, jobs);
  const std::vector<PreparedCloud> test_prep = prepare_set(data.test, base.model, jobs);

  // Every (variant, seed) cell trains an independent model against the shared
  // prepared sets, so the grid runs under parallel_for with fixed result slots;
  // the reduction below is serial and order-independent of the schedule.
  const int n_seeds = static_cast<int>(seeds.size());
  const int n_runs = static_cast<int>(suite.size()) * n_seeds;
  std::vector<MetricsReport> cell(static_cast<std::size_t>(n_runs));
  parallel_for(n_runs, jobs, [&](int run) {
    const AblationVariant& variant = suite[static_cast<std::size_t>(run / n_seeds)];
    TrainConfig config = base;
    config.seed = seeds[static_cast<std::size_t>(run % n_seeds)];
    config.model.sr = variant.sr;
    config.model.qa = variant.qa;
    config.model.fusion = variant.fusion;
    config.model.feature_mask = variant.feature_mask;
    auto trained = train_prepared(train_prep, val_prep, config);
    cell[static_cast<std::size_t>(run)] = evaluate_prepared(test_prep, trained.first);
  });

  AblationResult result;
  result.seeds = seeds;
  for (std::size_t v = 0; v < suite.size(); ++v) {
    AblationRow row;
    row.name = suite[v].name;
    double map_sum = 0.0, macc_sum = 0.0, oa_sum = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      const MetricsReport& metrics = cell[v * static_cast<std::size_t>(n_seeds) +
                                          static_cast<std::size_t>(s)];
      row.seed_miou.push_back(metrics.miou);
      map_sum += metrics.map;
      macc_sum += metrics.macc;
      oa_sum += metrics.oa;
    }
    const double n = static_cast<double>(n_seeds);
    for (double v2 : row.seed_miou) row.miou_mean += v2;
    row.miou_mean /= n;
    if (n_seeds > 1) {
      double ss = 0.0;
      for (double v2 : row.seed_miou) ss += (v2 - row.miou_mean) * (v2 - row.miou_mean);
      row.miou_sd = std::sqrt(ss / (n - 1.0));
    }
    row.map_mean = map_sum / n;
    row.macc_mean = macc_sum / n;
    row.oa_mean = oa_sum / n;
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string ablation_to_csv(const AblationResult& result) {
  std::string out;
  out += "# cinet-ablation-v1\n";
  out += "# miou_sd is the sample standard deviation over seeds (0 for one seed)\n";
  out += "variant,seeds,miou_mean,miou_sd,map_mean,macc_mean,oa_mean";
  for (std::size_t s = 0; s < result.seeds.size(); ++s) {
    out += ",miou_seed" + std::to_string(result.seeds[s]);
  }
  out += "\n";
  for (const AblationRow& row : result.rows) {
    out += row.name + "," + std::to_string(result.seeds.size()) + "," + fmt(row.miou_mean) + "," +
           fmt(row.miou_sd) + "," + fmt(row.map_mean) + "," + fmt(row.macc_mean) + "," +
           fmt(row.oa_mean);
    for (double v : row.seed_miou) out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

std::string ablation_to_markdown(const AblationResult& result) {
  std::string out;
  out += "| variant | mIoU (mean ± sd) | mAP | mAcc | OA |\n";
  out += "|---|---|---|---|---|\n";
  for (const AblationRow& row : result.rows) {
    out += "| " + row.name + " | " + fmt(row.miou_mean, 4) + " ± " + fmt(row.miou_sd, 3) + " | " +
           fmt(row.map_mean, 4) + " | " + fmt(row.macc_mean, 4) + " | " + fmt(row.oa_mean, 4) +
           " |\n";
  }
  return out;
}

}  // namespace cinet

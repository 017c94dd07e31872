// cinet: one binary for the whole workflow. Subcommands cover dataset
// generation, quality assessment, mixture fitting, training, evaluation,
// ablation and embedding export. Exit codes: 0 success, 1 usage, 2 runtime.

#include "CLI11.hpp"

#include "cinet/ablation.hpp"
#include "cinet/dataset.hpp"
#include "cinet/encoder.hpp"
#include "cinet/ini_config.hpp"
#include "cinet/intervention.hpp"
#include "cinet/io.hpp"
#include "cinet/metrics.hpp"
#include "cinet/mixture_model.hpp"
#include "cinet/model.hpp"
#include "cinet/parallel.hpp"
#include "cinet/quality_features.hpp"
#include "cinet/training.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cinet;

namespace {

// Input problems that the flag parser cannot see (bad CINET_SEED, unknown
// split name). Reported like flag errors: message + exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// Seed precedence: CLI flag > config file > CINET_SEED > 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& cli,
                           const std::optional<std::uint64_t>& config) {
  if (cli) return *cli;
  if (config) return *config;
  if (const char* env = std::getenv("CINET_SEED")) {
    const std::string text(env);
    std::size_t used = 0;
    std::uint64_t value = 0;
    try {
      value = std::stoull(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text.empty() || text[0] == '-')
      throw UsageError("CINET_SEED: cannot parse '" + text + "' as an unsigned integer");
    return value;
  }
  return 0;
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + out + "': " + ec.message());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

const std::vector<LabeledCloud>& pick_split(const DatasetSplits& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw UsageError("--split: expected train, val or test, got '" + name + "'");
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
  std::string config_file;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> clouds;
  int jobs = 1;
};

void run_generate(const GenerateOptions& opt) {
  DatasetConfig config;
  std::optional<std::uint64_t> config_seed;
  if (!opt.config_file.empty()) {
    const IniConfig ini = IniConfig::parse_file(opt.config_file);
    config = dataset_config_from_ini(ini);
    if (ini.has("seed")) config_seed = config.seed;
  }
  if (opt.clouds) config.clouds = *opt.clouds;
  config.seed = resolve_seed(opt.seed, config_seed);
  config.validate();

  std::cout << "resolved configuration:\n" << dataset_config_to_ini(config);
  ensure_out_dir(opt.out);
  generate_dataset(config, opt.out, opt.jobs);
  std::cout << "wrote " << config.clouds << " clouds ("
            << config.train_count() << " train / " << config.val_count() << " val / "
            << config.test_count() << " test) to " << opt.out << "\n";
}

// ------------------------------------------------------------------ assess

struct AssessOptions {
  std::vector<std::string> files;
  std::string data_dir;
  std::string out;
  std::string gmm_file;
  QualityConfig quality;
  int jobs = 1;
};

void run_assess(const AssessOptions& opt) {
  std::vector<LabeledCloud> clouds;
  for (const std::string& file : opt.files) {
    LabeledCloud entry;
    entry.id = fs::path(file).stem().string();
    entry.cloud = load_point_cloud(file, format_from_name(fs::path(file).extension().string() ==
                                                                  ".xyz"
                                                              ? "xyz"
                                                              : "ply"));
    clouds.push_back(std::move(entry));
  }
  if (!opt.data_dir.empty()) {
    DatasetSplits splits = load_dataset(opt.data_dir);
    for (auto* split : {&splits.train, &splits.val, &splits.test})
      for (LabeledCloud& c : *split) clouds.push_back(std::move(c));
  }
  if (clouds.empty())
    throw UsageError("assess: no inputs; pass cloud files and/or --data <dataset dir>");

  std::optional<GmmModel> gmm;
  if (!opt.gmm_file.empty()) {
    gmm = load_gmm(opt.gmm_file);
    if (gmm->K < 1)
      throw std::runtime_error("assess: '" + opt.gmm_file +
                               "' holds a standardizer without mixture components");
  }

  std::cout << "assessing " << clouds.size() << " clouds (grid_resolution = "
            << opt.quality.grid_resolution << ", normal_k = " << opt.quality.normal_k
            << ", integrity_k = " << opt.quality.integrity_k << ")\n";

  std::vector<std::string> rows(clouds.size());
  parallel_for(static_cast<int>(clouds.size()), opt.jobs, [&](int i) {
    const LabeledCloud& entry = clouds[static_cast<std::size_t>(i)];
    const QualityFeature q = quality_vector(entry.cloud, opt.quality);
    std::string row = entry.id + "," + fmt17(q.density) + "," + fmt17(q.uniformity) + "," +
                      fmt17(q.integrity);
    if (gmm) {
      row += "," + fmt17(gmm_density(*gmm, q.to_vector()));
      for (double g : gmm_responsibilities(*gmm, q.to_vector())) row += "," + fmt17(g);
    }
    rows[static_cast<std::size_t>(i)] = row + "\n";
  });

  std::string csv = "id,c_density,c_uniformity,c_integrity";
  if (gmm) {
    csv += ",gmm_density";
    for (int k = 1; k <= gmm->K; ++k) csv += ",gamma_" + std::to_string(k);
  }
  csv += "\n";
  for (const std::string& row : rows) csv += row;

  ensure_out_dir(opt.out);
  write_text_file(fs::path(opt.out) / "quality.csv", csv);
  std::cout << "wrote " << (fs::path(opt.out) / "quality.csv").string() << "\n";
}

// ----------------------------------------------------------------- fit-gmm

struct FitGmmOptions {
  std::string data_dir;
  std::string out;
  int components = 0;  // 0: BIC selection
  int k_max = 5;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

void run_fit_gmm(const FitGmmOptions& opt) {
  GmmFitOptions options;
  options.seed = resolve_seed(opt.seed, std::nullopt);

  const DatasetSplits splits = load_dataset(opt.data_dir);
  if (splits.train.empty()) throw std::runtime_error("fit-gmm: dataset has no train clouds");
  std::cout << "fit-gmm: " << splits.train.size() << " train clouds, components = "
            << opt.components << " (0 selects by BIC, k_max = " << opt.k_max
            << "), seed = " << options.seed << "\n";

  std::vector<Eigen::Vector3d> samples(splits.train.size());
  parallel_for(static_cast<int>(splits.train.size()), opt.jobs, [&](int i) {
    samples[static_cast<std::size_t>(i)] =
        quality_vector(splits.train[static_cast<std::size_t>(i)].cloud).to_vector();
  });

  int K = opt.components;
  if (K == 0) {
    GmmModel probe = standardizer_only(samples);
    std::vector<Eigen::Vector3d> z(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) z[i] = probe.standardize(samples[i]);
    K = select_components_bic(z, std::min<int>(opt.k_max, static_cast<int>(samples.size())),
                              options);
    std::cout << "BIC selected K = " << K << "\n";
  }
  const GmmModel model = gmm_fit_standardized(samples, K, options);

  ensure_out_dir(opt.out);
  const fs::path path = fs::path(opt.out) / "gmm.txt";
  save_gmm(model, path.string());
  std::cout << "K = " << model.K << ", log-likelihood = " << fmt17(model.final_log_likelihood)
            << " after " << model.iterations << " iterations\nweights:";
  for (double w : model.weights) std::cout << " " << fmt17(w);
  std::cout << "\nwrote " << path.string() << "\n";
}

// ------------------------------------------------------------------- train

struct TrainOptions {
  std::string config_file;
  std::string data_dir;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  int jobs = 1;
};

std::string history_csv(const TrainReport& report) {
  std::string csv = "epoch,train_loss,val_miou\n";
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    csv += std::to_string(e) + "," + fmt17(report.train_loss[e]) + "," +
           fmt17(report.val_miou[e]) + "\n";
  }
  return csv;
}

void run_train(const TrainOptions& opt) {
  TrainConfig config;
  std::optional<std::uint64_t> config_seed;
  if (!opt.config_file.empty()) {
    const IniConfig ini = IniConfig::parse_file(opt.config_file);
    config = train_config_from_ini(ini);
    if (ini.has("seed")) config_seed = config.seed;
  }
  if (opt.epochs) config.epochs = *opt.epochs;
  config.seed = resolve_seed(opt.seed, config_seed);
  config.validate();

  std::cout << "resolved configuration:\n" << train_config_to_ini(config);
  const DatasetSplits splits = load_dataset(opt.data_dir);
  std::cout << "training on " << splits.train.size() << " clouds, validating on "
            << splits.val.size() << "\n";

  auto [model, report] = train(splits.train, splits.val, config, opt.jobs);

  ensure_out_dir(opt.out);
  const fs::path out(opt.out);
  save_checkpoint(model, (out / "checkpoint.ckpt").string());
  write_text_file(out / "history.csv", history_csv(report));
  write_text_file(out / "config-echo.ini", train_config_to_ini(config));

  std::cout << "best val mIoU = " << fmt17(report.best_val_miou) << " at epoch "
            << report.best_epoch << " (" << report.train_loss.size() << " epochs run, "
            << fmt17(report.wall_seconds) << " s)\n"
            << "wrote " << (out / "checkpoint.ckpt").string() << "\n";
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  std::string model_file;
  std::string data_dir;
  std::string split = "test";
  std::string out;
  int jobs = 1;
};

void run_eval(const EvalOptions& opt) {
  CINetModel model = load_checkpoint(opt.model_file);
  const DatasetSplits splits = load_dataset(opt.data_dir);
  const std::vector<LabeledCloud>& clouds = pick_split(splits, opt.split);
  if (clouds.empty()) throw std::runtime_error("eval: split '" + opt.split + "' is empty");

  std::cout << "evaluating " << clouds.size() << " " << opt.split << " clouds with "
            << opt.model_file << "\n";

  ensure_out_dir(opt.out);
  const fs::path pred_dir = fs::path(opt.out) / "predictions";
  ensure_out_dir(pred_dir.string());

  std::vector<ConfusionCounts> counts(clouds.size());
  std::vector<std::string> ids(clouds.size());
  parallel_for(static_cast<int>(clouds.size()), opt.jobs, [&](int i) {
    const LabeledCloud& entry = clouds[static_cast<std::size_t>(i)];
    const PointPrediction prediction = intervene_predict(model, entry.cloud);
    std::vector<std::uint8_t> pred(prediction.probabilities.size());
    for (std::size_t p = 0; p < pred.size(); ++p)
      pred[p] = prediction.probabilities[p] > 0.5 ? 1 : 0;
    counts[static_cast<std::size_t>(i)] = confusion_counts(pred, entry.cloud.labels);
    ids[static_cast<std::size_t>(i)] = entry.id;
    write_prediction_ply(entry.cloud, prediction.probabilities, pred,
                         (pred_dir / (entry.id + ".ply")).string());
  });

  const MetricsReport metrics = report(counts, ids);
  export_report(metrics, (fs::path(opt.out) / "metrics.csv").string());
  std::cout << "micro mIoU = " << fmt17(metrics.miou) << ", mAP = " << fmt17(metrics.map)
            << ", mAcc = " << fmt17(metrics.macc) << ", OA = " << fmt17(metrics.oa) << "\n"
            << "wrote " << (fs::path(opt.out) / "metrics.csv").string() << " and "
            << clouds.size() << " prediction plys\n";
}

// ------------------------------------------------------------------ ablate

struct AblateOptions {
  std::string config_file;
  std::string data_dir;
  std::string out;
  int seeds = 3;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

void run_ablate(const AblateOptions& opt) {
  TrainConfig base;
  std::optional<std::uint64_t> config_seed;
  if (!opt.config_file.empty()) {
    const IniConfig ini = IniConfig::parse_file(opt.config_file);
    base = train_config_from_ini(ini);
    if (ini.has("seed")) config_seed = base.seed;
  }
  base.seed = resolve_seed(opt.seed, config_seed);
  base.validate();
  if (opt.seeds < 1) throw UsageError("--seeds: need at least one seed");

  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < opt.seeds; ++s) seeds.push_back(base.seed + static_cast<std::uint64_t>(s));

  std::cout << "resolved configuration:\n" << train_config_to_ini(base) << "seeds:";
  for (std::uint64_t s : seeds) std::cout << " " << s;
  std::cout << "\n";

  const DatasetSplits splits = load_dataset(opt.data_dir);
  const AblationResult result = run_ablation(splits, base, seeds, opt.jobs);

  ensure_out_dir(opt.out);
  write_text_file(fs::path(opt.out) / "ablation.csv", ablation_to_csv(result));
  write_text_file(fs::path(opt.out) / "ablation.md", ablation_to_markdown(result));
  std::cout << ablation_to_markdown(result) << "wrote " << opt.out
            << "/ablation.csv and ablation.md\n";
}

// --------------------------------------------------------- dump-embeddings

struct DumpOptions {
  std::string model_file;
  std::string data_dir;
  std::string split = "test";
  std::string out;
  int jobs = 1;
};

void run_dump_embeddings(const DumpOptions& opt) {
  CINetModel model = load_checkpoint(opt.model_file);
  const DatasetSplits splits = load_dataset(opt.data_dir);
  const std::vector<LabeledCloud>& clouds = pick_split(splits, opt.split);
  if (clouds.empty())
    throw std::runtime_error("dump-embeddings: split '" + opt.split + "' is empty");

  const int d_model = model.config.encoder.d_model;
  std::cout << "dumping " << d_model << "-wide group embeddings for " << clouds.size() << " "
            << opt.split << " clouds\n";

  std::vector<std::string> blocks(clouds.size());
  parallel_for(static_cast<int>(clouds.size()), opt.jobs, [&](int i) {
    const LabeledCloud& entry = clouds[static_cast<std::size_t>(i)];
    const CloudGeometry geometry = prepare_cloud(entry.cloud, model.config);
    Tape tape;
    const EncodedGroups encoded = model.config.sr == SrVariant::transformer
                                      ? encode_groups(tape, geometry.groups, model.encoder)
                                      : encode_groups_mlp(tape, geometry.groups, model.mlp_encoder);
    const Tensor embeddings = encoded.embeddings.value();

    std::string block;
    for (int g = 0; g < geometry.groups.group_count(); ++g) {
      int defects = 0;
      const auto& members = geometry.groups.members[static_cast<std::size_t>(g)];
      for (int point : members)
        defects += entry.cloud.labels[static_cast<std::size_t>(point)] != 0 ? 1 : 0;
      // Majority member label; a tie counts as normal.
      const int label = 2 * defects > static_cast<int>(members.size()) ? 1 : 0;
      block += entry.id + "," + std::to_string(g) + "," + std::to_string(label);
      for (int j = 0; j < embeddings.cols; ++j) block += "," + fmt17(embeddings(g, j));
      block += "\n";
    }
    blocks[static_cast<std::size_t>(i)] = std::move(block);
  });

  std::string csv = "id,group,label";
  for (int j = 0; j < d_model; ++j) csv += ",e_" + std::to_string(j);
  csv += "\n";
  for (const std::string& block : blocks) csv += block;

  ensure_out_dir(opt.out);
  write_text_file(fs::path(opt.out) / "embeddings.csv", csv);
  std::cout << "wrote " << (fs::path(opt.out) / "embeddings.csv").string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cinet: causal-intervention surface defect segmentation workflow"};
  app.require_subcommand(1);

  GenerateOptions gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate a labeled synthetic dataset");
  generate->add_option("--config", gen.config_file, "INI dataset config");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--seed", gen.seed, "Master seed (beats config file and CINET_SEED)");
  generate->add_option("--clouds", gen.clouds, "Override the cloud count");
  generate->add_option("--jobs", gen.jobs, "Worker threads (1 = deterministic)");
  generate->callback([&] { run_generate(gen); });

  AssessOptions assess;
  CLI::App* assess_cmd = app.add_subcommand("assess", "Quality features per cloud, CSV out");
  assess_cmd->add_option("files", assess.files, "Cloud files (.ply or .xyz)");
  assess_cmd->add_option("--data", assess.data_dir, "Dataset directory (all splits)");
  assess_cmd->add_option("--out", assess.out, "Output directory")->required();
  assess_cmd->add_option("--gmm", assess.gmm_file,
                         "Fitted mixture; adds gmm_density and gamma_k columns");
  assess_cmd->add_option("--kde-bandwidth", assess.quality.kde_bandwidth,
                         "KDE bandwidth (<= 0 selects Scott's rule)");
  assess_cmd->add_option("--grid-resolution", assess.quality.grid_resolution,
                         "Uniformity voxel grid resolution per axis");
  assess_cmd->add_option("--normal-k", assess.quality.normal_k, "Normal estimation neighborhood");
  assess_cmd->add_option("--integrity-k", assess.quality.integrity_k, "Integrity neighborhood");
  assess_cmd->add_option("--jobs", assess.jobs, "Worker threads");
  assess_cmd->callback([&] { run_assess(assess); });

  FitGmmOptions fit;
  CLI::App* fit_cmd = app.add_subcommand("fit-gmm", "Fit the quality mixture on the train split");
  fit_cmd->add_option("--data", fit.data_dir, "Dataset directory")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();
  fit_cmd->add_option("--components", fit.components, "Component count (0 selects by BIC)");
  fit_cmd->add_option("--k-max", fit.k_max, "BIC search ceiling");
  fit_cmd->add_option("--seed", fit.seed, "EM seed (beats CINET_SEED)");
  fit_cmd->add_option("--jobs", fit.jobs, "Worker threads");
  fit_cmd->callback([&] { run_fit_gmm(fit); });

  TrainOptions train_opt;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model, write checkpoint + history");
  train_cmd->add_option("--config", train_opt.config_file, "INI training config");
  train_cmd->add_option("--data", train_opt.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", train_opt.out, "Output directory")->required();
  train_cmd->add_option("--seed", train_opt.seed, "Seed (beats config file and CINET_SEED)");
  train_cmd->add_option("--epochs", train_opt.epochs, "Override the epoch count");
  train_cmd->add_option("--jobs", train_opt.jobs, "Worker threads for data preparation");
  train_cmd->callback([&] { run_train(train_opt); });

  EvalOptions eval_opt;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint, write metrics + plys");
  eval_cmd->add_option("--model", eval_opt.model_file, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_opt.data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_opt.split, "train, val or test (default test)");
  eval_cmd->add_option("--out", eval_opt.out, "Output directory")->required();
  eval_cmd->add_option("--jobs", eval_opt.jobs, "Worker threads");
  eval_cmd->callback([&] { run_eval(eval_opt); });

  AblateOptions ablate;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Run the module/feature ablation suite");
  ablate_cmd->add_option("--config", ablate.config_file, "INI training config (the full model)");
  ablate_cmd->add_option("--data", ablate.data_dir, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->required();
  ablate_cmd->add_option("--seeds", ablate.seeds, "Seeds per variant (default 3)");
  ablate_cmd->add_option("--seed", ablate.seed, "Base seed (beats config file and CINET_SEED)");
  ablate_cmd->add_option("--jobs", ablate.jobs, "Worker threads across (variant, seed) runs");
  ablate_cmd->callback([&] { run_ablate(ablate); });

  DumpOptions dump;
  CLI::App* dump_cmd =
      app.add_subcommand("dump-embeddings", "Write group embeddings with majority labels");
  dump_cmd->add_option("--model", dump.model_file, "Checkpoint file")->required();
  dump_cmd->add_option("--data", dump.data_dir, "Dataset directory")->required();
  dump_cmd->add_option("--split", dump.split, "train, val or test (default test)");
  dump_cmd->add_option("--out", dump.out, "Output directory")->required();
  dump_cmd->add_option("--jobs", dump.jobs, "Worker threads");
  dump_cmd->callback([&] { run_dump_embeddings(dump); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the flag error
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "cinet: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "cinet: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

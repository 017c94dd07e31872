#include "cinet/dataset.hpp"

#include "cinet/io.hpp"
#include "cinet/metrics.hpp"
#include "cinet/parallel.hpp"
#include "cinet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace cinet {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string cloud_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cloud-%04d", index);
  return buf;
}

}  // namespace

void DatasetConfig::validate() const {
  if (clouds < 3) throw std::invalid_argument("dataset config: need at least 3 clouds");
  if (train_fraction <= 0 || val_fraction <= 0 || train_fraction + val_fraction >= 1) {
    throw std::invalid_argument(
        "dataset config: fractions must be positive with train + val < 1");
  }
  if (train_count() < 1 || val_count() < 1 || test_count() < 1) {
    throw std::invalid_argument("dataset config: a split would be empty");
  }
}

int DatasetConfig::train_count() const {
  return static_cast<int>(std::llround(train_fraction * clouds));
}
int DatasetConfig::val_count() const {
  return static_cast<int>(std::floor(val_fraction * clouds));
}
int DatasetConfig::test_count() const { return clouds - train_count() - val_count(); }

DatasetConfig dataset_config_from_ini(const IniConfig& ini) {
  DatasetConfig c;
  c.clouds = ini.get_int("clouds", c.clouds);
  c.train_fraction = ini.get_double("train_fraction", c.train_fraction);
  c.val_fraction = ini.get_double("val_fraction", c.val_fraction);
  c.seed = ini.get_uint64("seed", c.seed);
  c.apply_artifacts = ini.get_bool("apply_artifacts", c.apply_artifacts);

  SubstrateSpec& s = c.substrate;
  s.extent_x = ini.get_double("substrate.extent_x", s.extent_x);
  s.extent_y = ini.get_double("substrate.extent_y", s.extent_y);
  s.pitch = ini.get_double("substrate.pitch", s.pitch);
  s.trace_count = ini.get_int("substrate.trace_count", s.trace_count);
  s.trace_width = ini.get_double("substrate.trace_width", s.trace_width);
  s.trace_height = ini.get_double("substrate.trace_height", s.trace_height);
  s.noise_sigma = ini.get_double("substrate.noise_sigma", s.noise_sigma);

  DefectSpec& d = c.defects;
  d.target_count = ini.get_int("defects.target_count", d.target_count);
  d.band_lo = ini.get_double("defects.band_lo", d.band_lo);
  d.band_hi = ini.get_double("defects.band_hi", d.band_hi);
  d.scratch_weight = ini.get_double("defects.scratch_weight", d.scratch_weight);
  d.hole_weight = ini.get_double("defects.hole_weight", d.hole_weight);
  d.bump_weight = ini.get_double("defects.bump_weight", d.bump_weight);
  d.stain_weight = ini.get_double("defects.stain_weight", d.stain_weight);
  d.scratch_length = ini.get_double("defects.scratch_length", d.scratch_length);
  d.scratch_width = ini.get_double("defects.scratch_width", d.scratch_width);
  d.scratch_depth = ini.get_double("defects.scratch_depth", d.scratch_depth);
  d.scratch_segments = ini.get_int("defects.scratch_segments", d.scratch_segments);
  d.hole_radius = ini.get_double("defects.hole_radius", d.hole_radius);
  d.hole_rim = ini.get_double("defects.hole_rim", d.hole_rim);
  d.hole_depth = ini.get_double("defects.hole_depth", d.hole_depth);
  d.bump_radius = ini.get_double("defects.bump_radius", d.bump_radius);
  d.bump_height = ini.get_double("defects.bump_height", d.bump_height);
  d.stain_radius = ini.get_double("defects.stain_radius", d.stain_radius);
  d.stain_amp = ini.get_double("defects.stain_amp", d.stain_amp);

  ArtifactSpec& a = c.artifacts;
  a.stripe_axis = ini.get_int("artifacts.stripe_axis", a.stripe_axis);
  a.stripe_count = ini.get_int("artifacts.stripe_count", a.stripe_count);
  a.stripe_width = ini.get_double("artifacts.stripe_width", a.stripe_width);
  a.stripe_probability = ini.get_double("artifacts.stripe_probability", a.stripe_probability);
  a.blur_radius = ini.get_double("artifacts.blur_radius", a.blur_radius);
  a.blur_rate = ini.get_double("artifacts.blur_rate", a.blur_rate);
  return c;
}

std::string dataset_config_to_ini(const DatasetConfig& c) {
  std::string out;
  out += "clouds = " + std::to_string(c.clouds) + "\n";
  out += "train_fraction = " + fmt(c.train_fraction) + "\n";
  out += "val_fraction = " + fmt(c.val_fraction) + "\n";
  out += "seed = " + std::to_string(c.seed) + "\n";
  out += "apply_artifacts = " + std::string(c.apply_artifacts ? "true" : "false") + "\n";
  out += "\n[substrate]\n";
  out += "extent_x = " + fmt(c.substrate.extent_x) + "\n";
  out += "extent_y = " + fmt(c.substrate.extent_y) + "\n";
  out += "pitch = " + fmt(c.substrate.pitch) + "\n";
  out += "trace_count = " + std::to_string(c.substrate.trace_count) + "\n";
  out += "trace_width = " + fmt(c.substrate.trace_width) + "\n";
  out += "trace_height = " + fmt(c.substrate.trace_height) + "\n";
  out += "noise_sigma = " + fmt(c.substrate.noise_sigma) + "\n";
  out += "\n[defects]\n";
  out += "target_count = " + std::to_string(c.defects.target_count) + "\n";
  out += "band_lo = " + fmt(c.defects.band_lo) + "\n";
  out += "band_hi = " + fmt(c.defects.band_hi) + "\n";
  out += "scratch_weight = " + fmt(c.defects.scratch_weight) + "\n";
  out += "hole_weight = " + fmt(c.defects.hole_weight) + "\n";
  out += "bump_weight = " + fmt(c.defects.bump_weight) + "\n";
  out += "stain_weight = " + fmt(c.defects.stain_weight) + "\n";
  out += "scratch_length = " + fmt(c.defects.scratch_length) + "\n";
  out += "scratch_width = " + fmt(c.defects.scratch_width) + "\n";
  out += "scratch_depth = " + fmt(c.defects.scratch_depth) + "\n";
  out += "scratch_segments = " + std::to_string(c.defects.scratch_segments) + "\n";
  out += "hole_radius = " + fmt(c.defects.hole_radius) + "\n";
  out += "hole_rim = " + fmt(c.defects.hole_rim) + "\n";
  out += "hole_depth = " + fmt(c.defects.hole_depth) + "\n";
  out += "bump_radius = " + fmt(c.defects.bump_radius) + "\n";
  out += "bump_height = " + fmt(c.defects.bump_height) + "\n";
  out += "stain_radius = " + fmt(c.defects.stain_radius) + "\n";
  out += "stain_amp = " + fmt(c.defects.stain_amp) + "\n";
  out += "\n[artifacts]\n";
  out += "stripe_axis = " + std::to_string(c.artifacts.stripe_axis) + "\n";
  out += "stripe_count = " + std::to_string(c.artifacts.stripe_count) + "\n";
  out += "stripe_width = " + fmt(c.artifacts.stripe_width) + "\n";
  out += "stripe_probability = " + fmt(c.artifacts.stripe_probability) + "\n";
  out += "blur_radius = " + fmt(c.artifacts.blur_radius) + "\n";
  out += "blur_rate = " + fmt(c.artifacts.blur_rate) + "\n";
  return out;
}

void generate_dataset(const DatasetConfig& config, const std::string& out_dir, int jobs) {
  config.validate();
  const fs::path root(out_dir);
  const int n_train = config.train_count();
  const int n_val = config.val_count();

  std::error_code ec;
  fs::create_directories(root / "train", ec);
  fs::create_directories(root / "val", ec);
  fs::create_directories(root / "test", ec);
  if (!fs::is_directory(root / "train") || !fs::is_directory(root / "val") ||
      !fs::is_directory(root / "test")) {
    throw std::runtime_error("generate_dataset: cannot create split directories under '" +
                             out_dir + "'");
  }

  auto split_of = [&](int index) {
    if (index < n_train) return std::string("train");
    if (index < n_train + n_val) return std::string("val");
    return std::string("test");
  };

  std::vector<double> fractions(static_cast<std::size_t>(config.clouds), 0.0);
  parallel_for(config.clouds, jobs, [&](int index) {
    const std::uint64_t cloud_seed = derive_seed(config.seed, static_cast<std::uint64_t>(index));
    SubstrateSpec sub = config.substrate;
    sub.seed = derive_seed(cloud_seed, 0);
    PointCloud cloud = generate_substrate(sub);
    cloud = inject_defects(cloud, config.defects, derive_seed(cloud_seed, 1));
    if (config.apply_artifacts) {
      cloud = apply_scan_artifacts(cloud, config.artifacts, derive_seed(cloud_seed, 2));
    }
    cloud.meta.source_id = cloud_id(index);
    fractions[static_cast<std::size_t>(index)] = defect_proportion(cloud.labels);
    const fs::path file = root / split_of(index) / (cloud_id(index) + ".ply");
    save_point_cloud(cloud, file.string(), CloudFormat::ply_ascii);
  });

  std::ofstream manifest(root / "manifest.csv");
  if (!manifest) throw std::runtime_error("generate_dataset: cannot write manifest.csv");
  manifest << "# cinet-dataset-v1\n";
  manifest << "# split rule: train = round(train_fraction * n), val = floor(val_fraction * n), "
              "test = remainder\n";
  manifest << "# counts: train=" << n_train << " val=" << n_val << " test=" << config.test_count()
           << "\n";
  manifest << "id,split,defect_fraction\n";
  for (int i = 0; i < config.clouds; ++i) {
    manifest << cloud_id(i) << ',' << split_of(i) << ','
             << fmt(fractions[static_cast<std::size_t>(i)]) << '\n';
  }
  if (!manifest) throw std::runtime_error("generate_dataset: manifest write failed");

  std::ofstream echo(root / "config-echo.ini");
  if (!echo) throw std::runtime_error("generate_dataset: cannot write config-echo.ini");
  echo << dataset_config_to_ini(config);
  if (!echo) throw std::runtime_error("generate_dataset: config echo write failed");
}

DatasetSplits load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) {
    throw std::runtime_error("load_dataset: '" + dir + "' is not a directory");
  }
  auto load_split = [&](const char* name) {
    std::vector<LabeledCloud> clouds;
    const fs::path split = root / name;
    if (!fs::is_directory(split)) {
      throw std::runtime_error("load_dataset: missing split directory '" + split.string() + "'");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(split)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ply") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      LabeledCloud lc;
      lc.id = file.stem().string();
      lc.cloud = load_point_cloud(file.string(), CloudFormat::ply_ascii);
      clouds.push_back(std::move(lc));
    }
    if (clouds.empty()) {
      throw std::runtime_error("load_dataset: split '" + split.string() + "' has no .ply files");
    }
    return clouds;
  };
  DatasetSplits splits;
  splits.train = load_split("train");
  splits.val = load_split("val");
  splits.test = load_split("test");
  return splits;
}

}  // namespace cinet

#pragma once

#include "cinet/ini_config.hpp"
#include "cinet/point_cloud.hpp"
#include "cinet/synthetic.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cinet {

// Dataset generation: `clouds` independent substrate clouds, each built from
// seeds derived from (seed, cloud index), split train/val/test by the rule
// train = round(train_fraction * n), val = floor(val_fraction * n), test =
// the remainder (documented in the manifest header).
struct DatasetConfig {
  int clouds = 10;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;
  bool apply_artifacts = true;
  SubstrateSpec substrate;
  DefectSpec defects;
  ArtifactSpec artifacts;

  void validate() const;
  int train_count() const;
  int val_count() const;
  int test_count() const;
};

DatasetConfig dataset_config_from_ini(const IniConfig& ini);
std::string dataset_config_to_ini(const DatasetConfig& config);

// Writes out_dir/{train,val,test}/cloud-NNNN.ply, manifest.csv, and
// config-echo.ini. Rerunning with the same config reproduces every byte.
void generate_dataset(const DatasetConfig& config, const std::string& out_dir, int jobs = 1);

struct LabeledCloud {
  std::string id;
  PointCloud cloud;
};

struct DatasetSplits {
  std::vector<LabeledCloud> train, val, test;
};

// Reads the layout generate_dataset writes: PLY files under train/ val/
// test/, sorted by filename within each split.
DatasetSplits load_dataset(const std::string& dir);

}  // namespace cinet

#pragma once

#include "cinet/grouping.hpp"
#include "cinet/model.hpp"
#include "cinet/point_cloud.hpp"
#include "cinet/tape.hpp"

#include <vector>

namespace cinet {

// Per-cloud preprocessing that does not depend on network weights: grouping,
// per-point token sources, and the raw quality vector. Computed once per
// cloud and reused across epochs, mixture components, and ablation variants.
struct CloudGeometry {
  PointGroups groups;
  Tensor orphan_local;         // m x 3 offsets of non-member points from their keypoint
  std::vector<int> token_row;  // per point: row into [member tokens ; orphan tokens]
  Eigen::Vector3d quality;     // raw (density, uniformity, integrity)
};

CloudGeometry prepare_cloud(const PointCloud& cloud, const ModelConfig& config);

// Forward products of one cloud on a live tape. probabilities feed the loss
// during training; attention is reporting only (the mixture-weighted mean of
// per-component simplices in marginalize mode).
struct ForwardVars {
  Var probabilities;  // n x 1
  Var attention;      // 1 x n_groups
};

ForwardVars model_forward(Tape& tape, CINetModel& model, const CloudGeometry& geometry);

struct PointPrediction {
  std::vector<double> probabilities;
  std::vector<double> logits;  // log(p / (1 - p)), so sigmoid(logit) = probability
  std::vector<double> attention;
};

// The deployed predictor. plugin mode conditions on the cloud's own quality
// signal; marginalize mode (the intervention) averages per-component
// predictions at the mixture means, weighted by the mixture weights.
PointPrediction intervene_predict(CINetModel& model, const PointCloud& cloud);
PointPrediction intervene_predict(CINetModel& model, const CloudGeometry& geometry);

// The quality signal rows the forward pass conditions on: [standardized
// masked features, standardized-space log mixture density], one row per
// mixture component in marginalize mode, a single row otherwise. Exposed for
// tests and the embedding dump.
std::vector<std::pair<double, Tensor>> conditioning_signals(const CINetModel& model,
                                                            const Eigen::Vector3d& raw_quality);

}  // namespace cinet

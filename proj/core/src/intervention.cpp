#include "cinet/intervention.hpp"

#include "cinet/quality_features.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cinet {

CloudGeometry prepare_cloud(const PointCloud& cloud, const ModelConfig& config) {
  config.validate();
  const int n = static_cast<int>(cloud.size());
  if (n < config.group_k) {
    throw std::invalid_argument("prepare_cloud: cloud of " + std::to_string(n) +
                                " points is smaller than group_k " +
                                std::to_string(config.group_k));
  }
  CloudGeometry geom;
  geom.groups = group_points(cloud, config.groups_for(n), config.group_k);

  const int g = geom.groups.group_count();
  const int k = geom.groups.k;
  std::vector<int> orphan_rows;
  geom.token_row.resize(n);
  for (int p = 0; p < n; ++p) {
    if (geom.groups.member_slot[p] >= 0) {
      geom.token_row[p] = geom.groups.assignment[p] * k + geom.groups.member_slot[p];
    } else {
      geom.token_row[p] = g * k + static_cast<int>(orphan_rows.size());
      orphan_rows.push_back(p);
    }
  }
  geom.orphan_local = Tensor::zeros(static_cast<int>(orphan_rows.size()), 3);
  for (std::size_t i = 0; i < orphan_rows.size(); ++i) {
    const int p = orphan_rows[i];
    const Eigen::Vector3d local =
        cloud.points[p] - cloud.points[geom.groups.keypoints[geom.groups.assignment[p]]];
    geom.orphan_local(static_cast<int>(i), 0) = local.x();
    geom.orphan_local(static_cast<int>(i), 1) = local.y();
    geom.orphan_local(static_cast<int>(i), 2) = local.z();
  }

  geom.quality = quality_vector(cloud, config.quality).to_vector();
  return geom;
}

std::vector<std::pair<double, Tensor>> conditioning_signals(const CINetModel& model,
                                                            const Eigen::Vector3d& raw_quality) {
  Eigen::Vector3d masked = raw_quality;
  for (int i = 0; i < 3; ++i) {
    if (!model.config.feature_mask[i]) masked[i] = model.feature_fill[i];
  }

  auto signal_row = [](const Eigen::Vector3d& z, double log_density) {
    Tensor row = Tensor::zeros(1, 4);
    row(0, 0) = z.x();
    row(0, 1) = z.y();
    row(0, 2) = z.z();
    row(0, 3) = log_density;
    return row;
  };

  std::vector<std::pair<double, Tensor>> signals;
  if (model.config.qa == QaVariant::raw_vector) {
    // No density model: the fourth slot stays zero and the intervention
    // degenerates to conditioning on the cloud's own standardized features.
    signals.emplace_back(1.0, signal_row(model.gmm.standardize(masked), 0.0));
    return signals;
  }
  if (model.gmm.K < 1) {
    throw std::invalid_argument("conditioning_signals: model has no fitted mixture");
  }
  if (model.config.intervention == InterventionMode::plugin) {
    const Eigen::Vector3d z = model.gmm.standardize(masked);
    signals.emplace_back(1.0, signal_row(z, gmm_log_density_standardized(model.gmm, z)));
    return signals;
  }
  for (int k = 0; k < model.gmm.K; ++k) {
    const Eigen::Vector3d& mu = model.gmm.means[k];
    signals.emplace_back(model.gmm.weights[k],
                         signal_row(mu, gmm_log_density_standardized(model.gmm, mu)));
  }
  return signals;
}

ForwardVars model_forward(Tape& tape, CINetModel& model, const CloudGeometry& geometry) {
  EncodedGroups encoded = model.config.sr == SrVariant::transformer
                              ? encode_groups(tape, geometry.groups, model.encoder)
                              : encode_groups_mlp(tape, geometry.groups, model.mlp_encoder);

  Var all_tokens = encoded.tokens_flat;
  if (geometry.orphan_local.rows > 0) {
    Var orphan_tokens =
        embed_tokens(tape, tape.input(geometry.orphan_local), encoded.embed_w, encoded.embed_b);
    all_tokens = tape.concat_rows({encoded.tokens_flat, orphan_tokens});
  }
  Var point_tokens = tape.gather_rows(all_tokens, geometry.token_row);

  const auto signals = conditioning_signals(model, geometry.quality);
  Var probabilities;
  Var attention;
  for (std::size_t s = 0; s < signals.size(); ++s) {
    Var signal = tape.input(signals[s].second);
    HeadForward fwd = head_forward(tape, encoded.embeddings, signal, model.head);
    Var logits = point_logits(tape, fwd, point_tokens, geometry.groups.assignment, model.head);
    Var probs = tape.sigmoid(logits);
    Var weighted_probs = tape.mul_scalar(probs, signals[s].first);
    Var weighted_attention = tape.mul_scalar(fwd.attention, signals[s].first);
    if (s == 0) {
      probabilities = weighted_probs;
      attention = weighted_attention;
    } else {
      probabilities = tape.add(probabilities, weighted_probs);
      attention = tape.add(attention, weighted_attention);
    }
  }
  return ForwardVars{.probabilities = probabilities, .attention = attention};
}

PointPrediction intervene_predict(CINetModel& model, const CloudGeometry& geometry) {
  if (!model.trained) throw std::invalid_argument("intervene_predict: model is not trained");
  Tape tape;
  ForwardVars fwd = model_forward(tape, model, geometry);

  PointPrediction prediction;
  const Tensor& probs = fwd.probabilities.value();
  prediction.probabilities.resize(static_cast<std::size_t>(probs.rows));
  prediction.logits.resize(static_cast<std::size_t>(probs.rows));
  for (int i = 0; i < probs.rows; ++i) {
    const double p = probs(i, 0);
    const double clamped = std::min(1.0 - 1e-15, std::max(1e-15, p));
    prediction.probabilities[static_cast<std::size_t>(i)] = p;
    prediction.logits[static_cast<std::size_t>(i)] = std::log(clamped / (1.0 - clamped));
  }
  const Tensor& att = fwd.attention.value();
  prediction.attention.resize(static_cast<std::size_t>(att.cols));
  for (int i = 0; i < att.cols; ++i) prediction.attention[static_cast<std::size_t>(i)] = att(0, i);
  return prediction;
}

PointPrediction intervene_predict(CINetModel& model, const PointCloud& cloud) {
  const CloudGeometry geometry = prepare_cloud(cloud, model.config);
  return intervene_predict(model, geometry);
}

}  // namespace cinet

#pragma once

#include "cinet/detection_head.hpp"
#include "cinet/encoder.hpp"
#include "cinet/mixture_model.hpp"
#include "cinet/quality_features.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cinet {

enum class SrVariant { transformer, mlp };
enum class QaVariant { gmm, raw_vector };
enum class FusionVariant { attention, concat };
enum class InterventionMode { plugin, marginalize };

std::string to_string(SrVariant v);
std::string to_string(QaVariant v);
std::string to_string(FusionVariant v);
std::string to_string(InterventionMode v);
SrVariant sr_variant_from(const std::string& s);
QaVariant qa_variant_from(const std::string& s);
FusionVariant fusion_variant_from(const std::string& s);
InterventionMode intervention_mode_from(const std::string& s);

struct ModelConfig {
  EncoderConfig encoder;  // d_model, layers, heads, d_ff
  int d_latent = 64;
  // n_groups = 0 selects the size rule: 512 for clouds of at least 16K
  // points, max(16, n/32) below that. A positive value is used as given,
  // clamped to the cloud size.
  int n_groups = 0;
  int group_k = 32;
  int gmm_components = 0;  // 0: BIC selection up to gmm_k_max
  int gmm_k_max = 5;
  SrVariant sr = SrVariant::transformer;
  QaVariant qa = QaVariant::gmm;
  FusionVariant fusion = FusionVariant::attention;
  InterventionMode intervention = InterventionMode::marginalize;
  std::array<bool, 3> feature_mask = {true, true, true};  // density, uniformity, integrity
  QualityConfig quality;

  int groups_for(int cloud_size) const;
  void validate() const;
};

// The trained artifact: encoder (one of two variants), detection head, the
// frozen mixture model over quality features (a K = 0 standardizer for the
// raw-vector ablation), and the training-set feature means that stand in for
// masked quality features.
struct CINetModel {
  ModelConfig config;
  EncoderParams encoder;         // sr == transformer
  MlpEncoderParams mlp_encoder;  // sr == mlp
  HeadParams head;
  GmmModel gmm;
  std::array<double, 3> feature_fill = {0.0, 0.0, 0.0};
  bool trained = false;

  static CINetModel init(const ModelConfig& config, std::uint64_t seed);
  std::vector<Parameter*> parameters();  // the active variant's parameters, stable order
};

// Plain-text checkpoint: config echo, embedded gmm block, then every named
// tensor at 17 significant digits. save -> load is bitwise faithful.
void save_checkpoint(const CINetModel& model, const std::string& path);
CINetModel load_checkpoint(const std::string& path);

}  // namespace cinet

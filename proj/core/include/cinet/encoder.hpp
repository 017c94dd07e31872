#pragma once

#include "cinet/grouping.hpp"
#include "cinet/optimizer.hpp"
#include "cinet/tape.hpp"

#include <cstdint>
#include <vector>

namespace cinet {

struct EncoderConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 0;  // 0 selects 2 * d_model

  int ff_width() const { return d_ff > 0 ? d_ff : 2 * d_model; }
  void validate() const;
};

// One pre-norm transformer block: x += MHSA(LN(x)); x += FFN(LN(x)).
struct EncoderLayerParams {
  std::vector<Parameter> wq, wk, wv;  // per head, d_model x d_head
  Parameter wo, bo;                   // d_model x d_model, 1 x d_model
  Parameter ln1_gain, ln1_bias;
  Parameter ln2_gain, ln2_bias;
  Parameter ff1_w, ff1_b;  // d_model x d_ff
  Parameter ff2_w, ff2_b;  // d_ff x d_model
};

struct EncoderParams {
  EncoderConfig config;
  Parameter embed_w;  // 3 x d_model
  Parameter embed_b;  // 1 x d_model
  std::vector<EncoderLayerParams> layers;

  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);
  std::vector<Parameter*> parameters();
};

// Ablation variant: the shared token embedding followed by a two layer MLP
// applied to every token independently, then mean pooling per group.
struct MlpEncoderParams {
  EncoderConfig config;  // d_model and d_ff are used, layers/heads ignored
  Parameter embed_w, embed_b;
  Parameter w1, b1;  // d_model x d_ff
  Parameter w2, b2;  // d_ff x d_model

  static MlpEncoderParams init(const EncoderConfig& config, std::uint64_t seed);
  std::vector<Parameter*> parameters();
};

// Forward pass products shared by the detection head. tokens_flat stacks the
// encoded member tokens group-major: row g * k + s is member slot s of group
// g. embeddings holds one mean-pooled row per group.
struct EncodedGroups {
  Var tokens_flat;
  Var embeddings;
  Var embed_w;  // bound embedding params, reused for orphan point tokens
  Var embed_b;
};

// Raw local coordinates of all group members (n_groups * k) x 3, group-major.
Tensor stack_local_coords(const PointGroups& groups);

// Tokens for arbitrary local offsets: coords * W + b.
Var embed_tokens(Tape& tape, Var local_coords, Var embed_w, Var embed_b);

EncodedGroups encode_groups(Tape& tape, const PointGroups& groups, EncoderParams& params);
EncodedGroups encode_groups_mlp(Tape& tape, const PointGroups& groups, MlpEncoderParams& params);

}  // namespace cinet

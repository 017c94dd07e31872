#pragma once

#include "cinet/grouping.hpp"
#include "cinet/optimizer.hpp"
#include "cinet/tape.hpp"

#include <cstdint>
#include <vector>

namespace cinet {

struct HeadConfig {
  int d_model = 64;    // width of incoming group embeddings
  int d_latent = 64;   // projection width shared by query/key/value
  int signal_dim = 4;  // conditioning vector length

  void validate() const;
};

// Detection head parameters. With attention fusion the conditioning signal is
// projected to a query and matched against per-group keys; the concat variant
// replaces that with an affine map over [embedding, signal] and uniform
// attention. Both paths share the residual enhancement block and the final
// affine scoring head over [global feature, group feature, point token].
struct HeadParams {
  HeadConfig config;
  bool attention_fusion = true;

  Parameter q_w, q_b;        // signal_dim x d_latent
  Parameter k_w, k_b;        // d_model x d_latent
  Parameter v_w, v_b;        // d_model x d_latent
  Parameter fuse_w, fuse_b;  // (d_model + signal_dim) x d_latent, concat variant

  Parameter res_w1, res_b1;  // d_latent x d_latent
  Parameter res_w2, res_b2;

  Parameter head_global_w;  // d_latent x 1
  Parameter head_group_w;   // d_latent x 1
  Parameter head_token_w;   // d_model x 1
  Parameter head_b;         // 1 x 1

  static HeadParams init(const HeadConfig& config, bool attention_fusion, std::uint64_t seed);
  std::vector<Parameter*> parameters();
};

struct HeadForward {
  Var weighted;   // n_groups x d_latent fused per-group features
  Var attention;  // 1 x n_groups, rows sum to 1
  Var enhanced;   // 1 x d_latent residual-enhanced pooled feature
};

// x + MLP(x) with a GELU hidden layer; width is preserved.
Var residual_enhance(Tape& tape, Var x, HeadParams& params);

// signal is a 1 x signal_dim row. Dispatches on params.attention_fusion.
HeadForward head_forward(Tape& tape, Var group_embeddings, Var signal, HeadParams& params);

// Per-point defect logits: an affine map over the concatenation of the
// enhanced global feature, the fused feature of the point's group, and the
// point's own encoded token, evaluated blockwise. point_tokens row i must be
// point i's token; group_of[i] selects its group row in forward.weighted.
Var point_logits(Tape& tape, const HeadForward& forward, Var point_tokens,
                 const std::vector<int>& group_of, HeadParams& params);

}  // namespace cinet

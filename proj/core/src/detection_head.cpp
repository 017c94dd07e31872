#include "cinet/detection_head.hpp"

#include "cinet/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cinet {

void HeadConfig::validate() const {
  if (d_model < 1) throw std::invalid_argument("head config: d_model must be positive");
  if (d_latent < 1) throw std::invalid_argument("head config: d_latent must be positive");
  if (signal_dim < 1) throw std::invalid_argument("head config: signal_dim must be positive");
}

HeadParams HeadParams::init(const HeadConfig& config, bool attention_fusion, std::uint64_t seed) {
  config.validate();
  HeadParams p;
  p.config = config;
  p.attention_fusion = attention_fusion;

  std::uint64_t stream = 0;
  auto next_seed = [&] { return derive_seed(seed, stream++); };
  auto weight = [&](const char* name, int rows, int cols) {
    return Parameter(name, kaiming_init(rows, cols, rows, next_seed()));
  };
  auto bias = [](const char* name, int cols) { return Parameter(name, Tensor::zeros(1, cols)); };

  const int d = config.d_model;
  const int dl = config.d_latent;
  const int sd = config.signal_dim;

  p.q_w = weight("head.q.w", sd, dl);
  p.q_b = bias("head.q.b", dl);
  p.k_w = weight("head.k.w", d, dl);
  p.k_b = bias("head.k.b", dl);
  p.v_w = weight("head.v.w", d, dl);
  p.v_b = bias("head.v.b", dl);
  p.fuse_w = weight("head.fuse.w", d + sd, dl);
  p.fuse_b = bias("head.fuse.b", dl);
  p.res_w1 = weight("head.res1.w", dl, dl);
  p.res_b1 = bias("head.res1.b", dl);
  p.res_w2 = weight("head.res2.w", dl, dl);
  p.res_b2 = bias("head.res2.b", dl);
  p.head_global_w = weight("head.score.global.w", dl, 1);
  p.head_group_w = weight("head.score.group.w", dl, 1);
  p.head_token_w = weight("head.score.token.w", d, 1);
  p.head_b = bias("head.score.b", 1);
  return p;
}

std::vector<Parameter*> HeadParams::parameters() {
  std::vector<Parameter*> out;
  if (attention_fusion) {
    out = {&q_w, &q_b, &k_w, &k_b, &v_w, &v_b};
  } else {
    out = {&fuse_w, &fuse_b};
  }
  out.push_back(&res_w1);
  out.push_back(&res_b1);
  out.push_back(&res_w2);
  out.push_back(&res_b2);
  out.push_back(&head_global_w);
  out.push_back(&head_group_w);
  out.push_back(&head_token_w);
  out.push_back(&head_b);
  return out;
}

Var residual_enhance(Tape& tape, Var x, HeadParams& params) {
  Var w1 = tape.param(params.res_w1);
  Var b1 = tape.param(params.res_b1);
  Var w2 = tape.param(params.res_w2);
  Var b2 = tape.param(params.res_b2);
  Var hidden = tape.gelu(tape.add(tape.matmul(x, w1), b1));
  return tape.add(x, tape.add(tape.matmul(hidden, w2), b2));
}

namespace {

HeadForward attention_forward(Tape& tape, Var embeddings, Var signal, HeadParams& params) {
  Var q_w = tape.param(params.q_w);
  Var q_b = tape.param(params.q_b);
  Var k_w = tape.param(params.k_w);
  Var k_b = tape.param(params.k_b);
  Var v_w = tape.param(params.v_w);
  Var v_b = tape.param(params.v_b);

  Var query = tape.add(tape.matmul(signal, q_w), q_b);        // 1 x dl
  Var keys = tape.add(tape.matmul(embeddings, k_w), k_b);     // g x dl
  Var values = tape.add(tape.matmul(embeddings, v_w), v_b);   // g x dl

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.config.d_latent));
  Var scores = tape.mul_scalar(tape.matmul(query, tape.transpose(keys)), inv_sqrt);  // 1 x g
  Var alpha = tape.softmax_rows(scores);

  // Scale each group's value row by its attention weight. mul broadcasts a
  // (1,c) row over rows, so work in the transposed layout.
  Var weighted = tape.transpose(tape.mul(tape.transpose(values), alpha));
  return HeadForward{.weighted = weighted, .attention = alpha, .enhanced = Var{}};
}

HeadForward concat_forward(Tape& tape, Var embeddings, Var signal, HeadParams& params) {
  Var fuse_w = tape.param(params.fuse_w);
  Var fuse_b = tape.param(params.fuse_b);

  const int g = embeddings.rows();
  // Repeat the signal row once per group, then fuse [embedding, signal].
  Var tiled = tape.gather_rows(signal, std::vector<int>(static_cast<std::size_t>(g), 0));
  Var fused = tape.add(tape.matmul(tape.concat_cols({embeddings, tiled}), fuse_w), fuse_b);

  Var alpha = tape.input(Tensor::full(1, g, 1.0 / static_cast<double>(g)));
  return HeadForward{.weighted = fused, .attention = alpha, .enhanced = Var{}};
}

}  // namespace

HeadForward head_forward(Tape& tape, Var group_embeddings, Var signal, HeadParams& params) {
  params.config.validate();
  if (signal.rows() != 1 || signal.cols() != params.config.signal_dim) {
    throw std::invalid_argument("head_forward: signal must be 1 x " +
                                std::to_string(params.config.signal_dim));
  }
  if (group_embeddings.cols() != params.config.d_model) {
    throw std::invalid_argument("head_forward: embeddings width " +
                                std::to_string(group_embeddings.cols()) + " != d_model " +
                                std::to_string(params.config.d_model));
  }
  HeadForward fwd = params.attention_fusion ? attention_forward(tape, group_embeddings, signal, params)
                                            : concat_forward(tape, group_embeddings, signal, params);
  fwd.enhanced = residual_enhance(tape, tape.mean_rows(fwd.weighted), params);
  return fwd;
}

Var point_logits(Tape& tape, const HeadForward& forward, Var point_tokens,
                 const std::vector<int>& group_of, HeadParams& params) {
  if (static_cast<int>(group_of.size()) != point_tokens.rows()) {
    throw std::invalid_argument("point_logits: group assignment size " +
                                std::to_string(group_of.size()) + " != token rows " +
                                std::to_string(point_tokens.rows()));
  }
  Var global_w = tape.param(params.head_global_w);
  Var group_w = tape.param(params.head_group_w);
  Var token_w = tape.param(params.head_token_w);
  Var b = tape.param(params.head_b);

  Var token_term = tape.matmul(point_tokens, token_w);              // n x 1
  Var group_scores = tape.matmul(forward.weighted, group_w);        // g x 1
  Var group_term = tape.gather_rows(group_scores, group_of);        // n x 1
  Var global_term = tape.matmul(forward.enhanced, global_w);        // 1 x 1
  return tape.add(tape.add(tape.add(token_term, group_term), global_term), b);
}

}  // namespace cinet

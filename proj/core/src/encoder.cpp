#include "cinet/encoder.hpp"

#include "cinet/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cinet {

void EncoderConfig::validate() const {
  if (d_model < 1) throw std::invalid_argument("encoder config: d_model must be positive");
  if (layers < 1) throw std::invalid_argument("encoder config: layers must be positive");
  if (heads < 1) throw std::invalid_argument("encoder config: heads must be positive");
  if (d_model % heads != 0) {
    throw std::invalid_argument("encoder config: d_model=" + std::to_string(d_model) +
                                " not divisible by heads=" + std::to_string(heads));
  }
}

namespace {

Parameter ones_param(std::string name, int cols) {
  return Parameter(std::move(name), Tensor::full(1, cols, 1.0));
}

Parameter zeros_param(std::string name, int rows, int cols) {
  return Parameter(std::move(name), Tensor::zeros(rows, cols));
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const int d = config.d_model;
  const int dh = d / config.heads;
  const int dff = config.ff_width();

  EncoderParams p;
  p.config = config;
  std::uint64_t stream = 0;
  auto next_seed = [&] { return derive_seed(seed, stream++); };

  p.embed_w = Parameter("encoder.embed.w", kaiming_init(3, d, 3, next_seed()));
  p.embed_b = zeros_param("encoder.embed.b", 1, d);

  p.layers.resize(config.layers);
  for (int l = 0; l < config.layers; ++l) {
    EncoderLayerParams& layer = p.layers[l];
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    for (int h = 0; h < config.heads; ++h) {
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      layer.wq.push_back(Parameter(hp + "wq", kaiming_init(d, dh, d, next_seed())));
      layer.wk.push_back(Parameter(hp + "wk", kaiming_init(d, dh, d, next_seed())));
      layer.wv.push_back(Parameter(hp + "wv", kaiming_init(d, dh, d, next_seed())));
    }
    layer.wo = Parameter(prefix + "wo", kaiming_init(d, d, d, next_seed()));
    layer.bo = zeros_param(prefix + "bo", 1, d);
    layer.ln1_gain = ones_param(prefix + "ln1.gain", d);
    layer.ln1_bias = zeros_param(prefix + "ln1.bias", 1, d);
    layer.ln2_gain = ones_param(prefix + "ln2.gain", d);
    layer.ln2_bias = zeros_param(prefix + "ln2.bias", 1, d);
    layer.ff1_w = Parameter(prefix + "ff1.w", kaiming_init(d, dff, d, next_seed()));
    layer.ff1_b = zeros_param(prefix + "ff1.b", 1, dff);
    layer.ff2_w = Parameter(prefix + "ff2.w", kaiming_init(dff, d, dff, next_seed()));
    layer.ff2_b = zeros_param(prefix + "ff2.b", 1, d);
  }
  return p;
}

std::vector<Parameter*> EncoderParams::parameters() {
  std::vector<Parameter*> out{&embed_w, &embed_b};
  for (EncoderLayerParams& layer : layers) {
    for (Parameter& w : layer.wq) out.push_back(&w);
    for (Parameter& w : layer.wk) out.push_back(&w);
    for (Parameter& w : layer.wv) out.push_back(&w);
    out.push_back(&layer.wo);
    out.push_back(&layer.bo);
    out.push_back(&layer.ln1_gain);
    out.push_back(&layer.ln1_bias);
    out.push_back(&layer.ln2_gain);
    out.push_back(&layer.ln2_bias);
    out.push_back(&layer.ff1_w);
    out.push_back(&layer.ff1_b);
    out.push_back(&layer.ff2_w);
    out.push_back(&layer.ff2_b);
  }
  return out;
}

MlpEncoderParams MlpEncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  if (config.d_model < 1) throw std::invalid_argument("encoder config: d_model must be positive");
  const int d = config.d_model;
  const int dff = config.ff_width();

  MlpEncoderParams p;
  p.config = config;
  std::uint64_t stream = 0;
  auto next_seed = [&] { return derive_seed(seed, stream++); };
  p.embed_w = Parameter("mlp_encoder.embed.w", kaiming_init(3, d, 3, next_seed()));
  p.embed_b = zeros_param("mlp_encoder.embed.b", 1, d);
  p.w1 = Parameter("mlp_encoder.w1", kaiming_init(d, dff, d, next_seed()));
  p.b1 = zeros_param("mlp_encoder.b1", 1, dff);
  p.w2 = Parameter("mlp_encoder.w2", kaiming_init(dff, d, dff, next_seed()));
  p.b2 = zeros_param("mlp_encoder.b2", 1, d);
  return p;
}

std::vector<Parameter*> MlpEncoderParams::parameters() {
  return {&embed_w, &embed_b, &w1, &b1, &w2, &b2};
}

Tensor stack_local_coords(const PointGroups& groups) {
  const int g = groups.group_count();
  const int k = groups.k;
  Tensor coords = Tensor::zeros(g * k, 3);
  for (int gi = 0; gi < g; ++gi) {
    for (int s = 0; s < k; ++s) {
      const Eigen::Vector3d& v = groups.local[gi][s];
      const int row = gi * k + s;
      coords(row, 0) = v.x();
      coords(row, 1) = v.y();
      coords(row, 2) = v.z();
    }
  }
  return coords;
}

Var embed_tokens(Tape& tape, Var local_coords, Var embed_w, Var embed_b) {
  return tape.add(tape.matmul(local_coords, embed_w), embed_b);
}

namespace {

struct BoundLayer {
  std::vector<Var> wq, wk, wv;
  Var wo, bo, ln1_gain, ln1_bias, ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
};

BoundLayer bind_layer(Tape& tape, EncoderLayerParams& layer) {
  BoundLayer b{.wo = tape.param(layer.wo),
               .bo = tape.param(layer.bo),
               .ln1_gain = tape.param(layer.ln1_gain),
               .ln1_bias = tape.param(layer.ln1_bias),
               .ln2_gain = tape.param(layer.ln2_gain),
               .ln2_bias = tape.param(layer.ln2_bias),
               .ff1_w = tape.param(layer.ff1_w),
               .ff1_b = tape.param(layer.ff1_b),
               .ff2_w = tape.param(layer.ff2_w),
               .ff2_b = tape.param(layer.ff2_b)};
  for (std::size_t h = 0; h < layer.wq.size(); ++h) {
    b.wq.push_back(tape.param(layer.wq[h]));
    b.wk.push_back(tape.param(layer.wk[h]));
    b.wv.push_back(tape.param(layer.wv[h]));
  }
  return b;
}

// One pre-norm block over the tokens of a single group.
Var transformer_block(Tape& tape, Var x, const BoundLayer& layer, double inv_sqrt_dh) {
  Var normed = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias);
  std::vector<Var> heads;
  heads.reserve(layer.wq.size());
  for (std::size_t h = 0; h < layer.wq.size(); ++h) {
    Var q = tape.matmul(normed, layer.wq[h]);
    Var k = tape.matmul(normed, layer.wk[h]);
    Var v = tape.matmul(normed, layer.wv[h]);
    Var scores = tape.mul_scalar(tape.matmul(q, tape.transpose(k)), inv_sqrt_dh);
    Var alpha = tape.softmax_rows(scores);
    heads.push_back(tape.matmul(alpha, v));
  }
  Var merged = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
  Var attended = tape.add(tape.matmul(merged, layer.wo), layer.bo);
  x = tape.add(x, attended);

  Var normed2 = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
  Var hidden = tape.gelu(tape.add(tape.matmul(normed2, layer.ff1_w), layer.ff1_b));
  Var ff = tape.add(tape.matmul(hidden, layer.ff2_w), layer.ff2_b);
  return tape.add(x, ff);
}

}  // namespace

EncodedGroups encode_groups(Tape& tape, const PointGroups& groups, EncoderParams& params) {
  params.config.validate();
  const int g = groups.group_count();
  const int k = groups.k;
  if (g < 1) throw std::invalid_argument("encode_groups: empty group set");

  Var embed_w = tape.param(params.embed_w);
  Var embed_b = tape.param(params.embed_b);
  std::vector<BoundLayer> layers;
  layers.reserve(params.layers.size());
  for (EncoderLayerParams& layer : params.layers) layers.push_back(bind_layer(tape, layer));

  Var coords = tape.input(stack_local_coords(groups));
  Var tokens = embed_tokens(tape, coords, embed_w, embed_b);

  const double inv_sqrt_dh =
      1.0 / std::sqrt(static_cast<double>(params.config.d_model / params.config.heads));

  std::vector<Var> encoded;
  std::vector<Var> pooled;
  encoded.reserve(g);
  pooled.reserve(g);
  std::vector<int> slice(k);
  for (int gi = 0; gi < g; ++gi) {
    std::iota(slice.begin(), slice.end(), gi * k);
    Var x = tape.gather_rows(tokens, slice);
    for (const BoundLayer& layer : layers) x = transformer_block(tape, x, layer, inv_sqrt_dh);
    encoded.push_back(x);
    pooled.push_back(tape.mean_rows(x));
  }

  EncodedGroups out{.tokens_flat = encoded.size() == 1 ? encoded[0] : tape.concat_rows(encoded),
                    .embeddings = pooled.size() == 1 ? pooled[0] : tape.concat_rows(pooled),
                    .embed_w = embed_w,
                    .embed_b = embed_b};
  return out;
}

EncodedGroups encode_groups_mlp(Tape& tape, const PointGroups& groups, MlpEncoderParams& params) {
  const int g = groups.group_count();
  const int k = groups.k;
  if (g < 1) throw std::invalid_argument("encode_groups_mlp: empty group set");

  Var embed_w = tape.param(params.embed_w);
  Var embed_b = tape.param(params.embed_b);
  Var w1 = tape.param(params.w1);
  Var b1 = tape.param(params.b1);
  Var w2 = tape.param(params.w2);
  Var b2 = tape.param(params.b2);

  Var coords = tape.input(stack_local_coords(groups));
  Var tokens = embed_tokens(tape, coords, embed_w, embed_b);
  Var hidden = tape.gelu(tape.add(tape.matmul(tokens, w1), b1));
  Var out_tokens = tape.add(tape.matmul(hidden, w2), b2);

  std::vector<Var> pooled;
  pooled.reserve(g);
  std::vector<int> slice(k);
  for (int gi = 0; gi < g; ++gi) {
    std::iota(slice.begin(), slice.end(), gi * k);
    pooled.push_back(tape.mean_rows(tape.gather_rows(out_tokens, slice)));
  }

  EncodedGroups out{.tokens_flat = out_tokens,
                    .embeddings = pooled.size() == 1 ? pooled[0] : tape.concat_rows(pooled),
                    .embed_w = embed_w,
                    .embed_b = embed_b};
  return out;
}

}  // namespace cinet

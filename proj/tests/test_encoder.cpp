#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cinet/detection_head.hpp"
#include "cinet/encoder.hpp"
#include "cinet/grouping.hpp"

#include "oracles.hpp"

using namespace cinet;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig config;
  config.d_model = 8;
  config.layers = 1;
  config.heads = 2;
  return config;
}

// Hand-built grouping: g groups of k members with the given local offsets.
PointGroups synthetic_groups(int g, int k, std::uint64_t seed) {
  PointGroups groups;
  groups.k = k;
  Xoshiro256pp rng(seed);
  for (int gi = 0; gi < g; ++gi) {
    groups.keypoints.push_back(gi);
    std::vector<int> members;
    std::vector<Eigen::Vector3d> local;
    for (int s = 0; s < k; ++s) {
      members.push_back(gi * k + s);
      local.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                         rng.uniform(-0.5, 0.5));
    }
    groups.members.push_back(std::move(members));
    groups.local.push_back(std::move(local));
  }
  return groups;
}

double max_abs_row_diff(const Tensor& a, int row_a, const Tensor& b, int row_b) {
  double worst = 0.0;
  for (int j = 0; j < a.cols; ++j) {
    worst = std::max(worst, std::abs(a(row_a, j) - b(row_b, j)));
  }
  return worst;
}

Tensor random_tensor(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  Tensor t(rows, cols);
  Xoshiro256pp rng(seed);
  for (double& v : t.data) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

double fd_max_rel(const std::function<Var(Tape&)>& build, std::vector<Parameter*> params,
                  int stride = 1) {
  for (Parameter* p : params) p->grad = Tensor::zeros(p->value.rows, p->value.cols);
  {
    Tape tape;
    tape.backward(build(tape));
  }
  const auto f = [&]() {
    Tape tape;
    return build(tape).value()(0, 0);
  };
  return oracle::fd_check(f, params, 1e-5, stride).max_rel;
}

}  // namespace

TEST_CASE("token embedding is the documented affine map") {
  const PointGroups groups = synthetic_groups(3, 5, 1);
  EncoderParams params = EncoderParams::init(tiny_encoder(), 7);

  // Zero weights: every token equals the bias row.
  params.embed_w.value = Tensor::zeros(3, 8);
  params.embed_b.value = random_tensor(1, 8, 2);
  {
    Tape tape;
    const Var coords = tape.input(stack_local_coords(groups));
    const Var tokens =
        embed_tokens(tape, coords, tape.param(params.embed_w), tape.param(params.embed_b));
    for (int r = 0; r < tokens.rows(); ++r) {
      for (int j = 0; j < 8; ++j) CHECK(tokens.value()(r, j) == params.embed_b.value(0, j));
    }
  }

  // Random weights: compare against a plain loop.
  params.embed_w.value = random_tensor(3, 8, 3);
  {
    Tape tape;
    const Tensor coords = stack_local_coords(groups);
    const Var tokens = embed_tokens(tape, tape.input(coords), tape.param(params.embed_w),
                                    tape.param(params.embed_b));
    for (int r = 0; r < tokens.rows(); ++r) {
      for (int j = 0; j < 8; ++j) {
        double want = params.embed_b.value(0, j);
        for (int a = 0; a < 3; ++a) want += coords(r, a) * params.embed_w.value(a, j);
        CHECK(tokens.value()(r, j) == doctest::Approx(want).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("stacked local coordinates are group-major slot-ordered") {
  const PointGroups groups = synthetic_groups(2, 3, 5);
  const Tensor coords = stack_local_coords(groups);
  REQUIRE(coords.rows == 6);
  REQUIRE(coords.cols == 3);
  for (int gi = 0; gi < 2; ++gi) {
    for (int s = 0; s < 3; ++s) {
      const Eigen::Vector3d& v =
          groups.local[static_cast<std::size_t>(gi)][static_cast<std::size_t>(s)];
      for (int a = 0; a < 3; ++a) CHECK(coords(gi * 3 + s, a) == v[a]);
    }
  }
}

TEST_CASE("permuting members inside a group leaves its embedding put") {
  const int k = 6;
  PointGroups groups = synthetic_groups(2, k, 9);
  EncoderParams params = EncoderParams::init(tiny_encoder(), 11);

  Tensor base_emb;
  {
    Tape tape;
    base_emb = encode_groups(tape, groups, params).embeddings.value();
  }

  // Reverse the member order of group 1.
  std::reverse(groups.members[1].begin(), groups.members[1].end());
  std::reverse(groups.local[1].begin(), groups.local[1].end());
  Tensor perm_emb;
  Tensor perm_tokens;
  {
    Tape tape;
    const EncodedGroups enc = encode_groups(tape, groups, params);
    perm_emb = enc.embeddings.value();
    perm_tokens = enc.tokens_flat.value();
  }

  CHECK(max_abs_row_diff(base_emb, 0, perm_emb, 0) == 0.0);  // untouched group
  CHECK(max_abs_row_diff(base_emb, 1, perm_emb, 1) <= 1e-12);

  // The member tokens themselves travel with the permutation.
  Tensor base_tokens;
  {
    std::reverse(groups.members[1].begin(), groups.members[1].end());
    std::reverse(groups.local[1].begin(), groups.local[1].end());
    Tape tape;
    base_tokens = encode_groups(tape, groups, params).tokens_flat.value();
  }
  for (int s = 0; s < k; ++s) {
    CHECK(max_abs_row_diff(base_tokens, k + s, perm_tokens, k + (k - 1 - s)) <= 1e-12);
  }
}

TEST_CASE("permuting group order permutes embeddings identically") {
  PointGroups groups = synthetic_groups(4, 5, 13);
  EncoderParams params = EncoderParams::init(tiny_encoder(), 17);

  Tensor base;
  {
    Tape tape;
    base = encode_groups(tape, groups, params).embeddings.value();
  }

  const std::vector<int> perm = {2, 0, 3, 1};
  PointGroups shuffled;
  shuffled.k = groups.k;
  for (int src : perm) {
    shuffled.keypoints.push_back(groups.keypoints[static_cast<std::size_t>(src)]);
    shuffled.members.push_back(groups.members[static_cast<std::size_t>(src)]);
    shuffled.local.push_back(groups.local[static_cast<std::size_t>(src)]);
  }
  Tensor moved;
  {
    Tape tape;
    moved = encode_groups(tape, shuffled, params).embeddings.value();
  }
  for (int gi = 0; gi < 4; ++gi) {
    CHECK(max_abs_row_diff(moved, gi, base, perm[static_cast<std::size_t>(gi)]) == 0.0);
  }
}

TEST_CASE("a group of identical offsets encodes to identical tokens") {
  PointGroups groups;
  groups.k = 4;
  groups.keypoints = {0};
  groups.members = {{0, 1, 2, 3}};
  groups.local = {{Eigen::Vector3d(0.25, -0.5, 0.125), Eigen::Vector3d(0.25, -0.5, 0.125),
                   Eigen::Vector3d(0.25, -0.5, 0.125), Eigen::Vector3d(0.25, -0.5, 0.125)}};
  EncoderParams params = EncoderParams::init(tiny_encoder(), 19);
  Tape tape;
  const Tensor tokens = encode_groups(tape, groups, params).tokens_flat.value();
  for (int s = 1; s < 4; ++s) CHECK(max_abs_row_diff(tokens, 0, tokens, s) == 0.0);
}

TEST_CASE("transformer encoder passes finite differences end to end") {
  const PointGroups groups = synthetic_groups(3, 6, 23);
  EncoderParams params = EncoderParams::init(tiny_encoder(), 29);
  const auto build = [&](Tape& tape) {
    const EncodedGroups enc = encode_groups(tape, groups, params);
    return tape.add(tape.mean_all(enc.embeddings),
                    tape.mul_scalar(tape.mean_all(enc.tokens_flat), 0.5));
  };
  CHECK(fd_max_rel(build, params.parameters()) < 1e-4);
}

TEST_CASE("mlp encoder pools means and passes finite differences") {
  const PointGroups groups = synthetic_groups(3, 5, 31);
  MlpEncoderParams params = MlpEncoderParams::init(tiny_encoder(), 37);

  {
    Tape tape;
    const EncodedGroups enc = encode_groups_mlp(tape, groups, params);
    // Pooling check: each embedding row is the mean of its member tokens.
    const Tensor& tokens = enc.tokens_flat.value();
    const Tensor& emb = enc.embeddings.value();
    for (int gi = 0; gi < 3; ++gi) {
      for (int j = 0; j < 8; ++j) {
        double mean = 0.0;
        for (int s = 0; s < 5; ++s) mean += tokens(gi * 5 + s, j);
        mean /= 5.0;
        CHECK(emb(gi, j) == doctest::Approx(mean).epsilon(1e-13));
      }
    }
  }

  const auto build = [&](Tape& tape) {
    return tape.mean_all(encode_groups_mlp(tape, groups, params).embeddings);
  };
  CHECK(fd_max_rel(build, params.parameters()) < 1e-4);
}

TEST_CASE("attention weights form a simplex") {
  HeadConfig config;
  config.d_model = 8;
  config.d_latent = 8;
  HeadParams params = HeadParams::init(config, true, 41);
  Tape tape;
  const Var emb = tape.input(random_tensor(7, 8, 43));
  const Var signal = tape.input(random_tensor(1, 4, 47));
  const HeadForward fwd = head_forward(tape, emb, signal, params);
  REQUIRE(fwd.attention.rows() == 1);
  REQUIRE(fwd.attention.cols() == 7);
  double sum = 0.0;
  for (int j = 0; j < 7; ++j) {
    CHECK(fwd.attention.value()(0, j) >= 0.0);
    sum += fwd.attention.value()(0, j);
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("a score gap of ten saturates the attention") {
  HeadConfig config;
  config.d_model = 2;
  config.d_latent = 2;
  HeadParams params = HeadParams::init(config, true, 53);
  // Query fixed at [1, 0]; keys equal the embeddings; scores are scaled by
  // 1/sqrt(2), so an embedding gap of 10*sqrt(2) is a score gap of 10.
  params.q_w.value = Tensor::zeros(4, 2);
  params.q_b.value = Tensor::zeros(1, 2);
  params.q_b.value(0, 0) = 1.0;
  params.k_w.value = Tensor::zeros(2, 2);
  params.k_w.value(0, 0) = 1.0;
  params.k_w.value(1, 1) = 1.0;
  params.k_b.value = Tensor::zeros(1, 2);

  Tensor emb = Tensor::zeros(5, 2);
  emb(2, 0) = 10.0 * std::sqrt(2.0);

  Tape tape;
  const HeadForward fwd =
      head_forward(tape, tape.input(emb), tape.input(Tensor::zeros(1, 4)), params);
  CHECK(fwd.attention.value()(0, 2) > 0.99);
}

TEST_CASE("concat fusion reports uniform attention") {
  HeadConfig config;
  config.d_model = 8;
  config.d_latent = 6;
  HeadParams params = HeadParams::init(config, false, 59);
  Tape tape;
  const HeadForward fwd = head_forward(tape, tape.input(random_tensor(5, 8, 61)),
                                       tape.input(random_tensor(1, 4, 67)), params);
  for (int j = 0; j < 5; ++j) {
    CHECK(fwd.attention.value()(0, j) == doctest::Approx(0.2).epsilon(1e-15));
  }
}

TEST_CASE("residual enhancement with zero weights is the identity") {
  HeadConfig config;
  config.d_model = 8;
  config.d_latent = 6;
  HeadParams params = HeadParams::init(config, true, 71);
  params.res_w1.value = Tensor::zeros(6, 6);
  params.res_b1.value = Tensor::zeros(1, 6);
  params.res_w2.value = Tensor::zeros(6, 6);
  params.res_b2.value = Tensor::zeros(1, 6);
  Tape tape;
  const Tensor x = random_tensor(1, 6, 73);
  const Var out = residual_enhance(tape, tape.input(x), params);
  for (int j = 0; j < 6; ++j) CHECK(out.value()(0, j) == x(0, j));
}

TEST_CASE("point logits decompose into token, group and global terms") {
  HeadConfig config;
  config.d_model = 8;
  config.d_latent = 6;
  HeadParams params = HeadParams::init(config, true, 79);

  Tape tape;
  const Var emb = tape.input(random_tensor(4, 8, 83));
  const Var signal = tape.input(random_tensor(1, 4, 89));
  const HeadForward fwd = head_forward(tape, emb, signal, params);

  const Tensor tokens = random_tensor(10, 8, 97);
  const std::vector<int> group_of = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  const Var logits = point_logits(tape, fwd, tape.input(tokens), group_of, params);
  REQUIRE(logits.rows() == 10);
  REQUIRE(logits.cols() == 1);

  const Tensor& weighted = fwd.weighted.value();
  const Tensor& enhanced = fwd.enhanced.value();
  for (int i = 0; i < 10; ++i) {
    double want = params.head_b.value(0, 0);
    for (int j = 0; j < 6; ++j) want += enhanced(0, j) * params.head_global_w.value(j, 0);
    for (int j = 0; j < 6; ++j) {
      want += weighted(group_of[static_cast<std::size_t>(i)], j) *
              params.head_group_w.value(j, 0);
    }
    for (int j = 0; j < 8; ++j) want += tokens(i, j) * params.head_token_w.value(j, 0);
    CHECK(std::abs(logits.value()(i, 0) - want) <= 1e-12);
  }
}

TEST_CASE("a zeroed scoring head emits only its bias") {
  HeadConfig config;
  config.d_model = 8;
  config.d_latent = 6;
  HeadParams params = HeadParams::init(config, true, 101);
  params.head_global_w.value = Tensor::zeros(6, 1);
  params.head_group_w.value = Tensor::zeros(6, 1);
  params.head_token_w.value = Tensor::zeros(8, 1);
  params.head_b.value = Tensor::full(1, 1, 0.7);

  Tape tape;
  const HeadForward fwd = head_forward(tape, tape.input(random_tensor(3, 8, 103)),
                                       tape.input(random_tensor(1, 4, 107)), params);
  const Var logits =
      point_logits(tape, fwd, tape.input(random_tensor(6, 8, 109)), {0, 1, 2, 0, 1, 2}, params);
  for (int i = 0; i < 6; ++i) CHECK(logits.value()(i, 0) == 0.7);
}

TEST_CASE("both fusion variants pass finite differences through the head") {
  for (const bool attention : {true, false}) {
    HeadConfig config;
    config.d_model = 8;
    config.d_latent = 6;
    HeadParams params = HeadParams::init(config, attention, 113);
    Parameter emb("emb", random_tensor(4, 8, 127));
    Parameter tokens("tokens", random_tensor(9, 8, 131));
    const std::vector<int> group_of = {0, 0, 1, 1, 2, 2, 3, 3, 0};

    const auto build = [&](Tape& tape) {
      const HeadForward fwd =
          head_forward(tape, tape.param(emb), tape.input(random_tensor(1, 4, 137)), params);
      const Var logits = point_logits(tape, fwd, tape.param(tokens), group_of, params);
      return tape.mean_all(tape.sigmoid(logits));
    };
    std::vector<Parameter*> all = params.parameters();
    all.push_back(&emb);
    all.push_back(&tokens);
    CHECK(fd_max_rel(build, all) < 1e-4);
  }
}

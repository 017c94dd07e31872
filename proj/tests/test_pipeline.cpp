#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cinet/intervention.hpp"
#include "cinet/mixture_model.hpp"
#include "cinet/model.hpp"
#include "cinet/rng.hpp"
#include "cinet/training.hpp"

using namespace cinet;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::path("tmp_pipeline") / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

bool same_vec(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return a.x() == b.x() && a.y() == b.y() && a.z() == b.z();
}

bool same_mat(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (a(r, c) != b(r, c)) return false;
    }
  }
  return true;
}

// A 20 x 20 jittered grid plate; two raised disks carry the defect labels.
PointCloud plate(std::uint64_t seed, bool with_defects = true) {
  Xoshiro256pp rng(seed);
  PointCloud cloud;
  const int side = 20;
  const double pitch = 0.25;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const double x = i * pitch + rng.uniform(-0.05, 0.05);
      const double y = j * pitch + rng.uniform(-0.05, 0.05);
      cloud.points.emplace_back(x, y, rng.uniform(-0.01, 0.01));
      cloud.labels.push_back(0);
    }
  }
  if (with_defects) {
    for (int c = 0; c < 2; ++c) {
      const double cx = rng.uniform(1.0, 4.0);
      const double cy = rng.uniform(1.0, 4.0);
      for (std::size_t p = 0; p < cloud.points.size(); ++p) {
        const double dx = cloud.points[p].x() - cx;
        const double dy = cloud.points[p].y() - cy;
        if (std::sqrt(dx * dx + dy * dy) < 0.45) {
          cloud.points[p].z() += 0.5;
          cloud.labels[p] = 1;
        }
      }
    }
  }
  cloud.meta.source_id = "plate-" + std::to_string(seed);
  return cloud;
}

// Coordinates on the 1/256 lattice, so a power-of-two translation shifts
// every coordinate without any rounding.
PointCloud dyadic_cloud(int n, std::uint64_t seed) {
  Xoshiro256pp rng(seed);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(rng.next_below(1025)) / 256.0;
    const double y = static_cast<double>(rng.next_below(1025)) / 256.0;
    const double z = static_cast<double>(rng.next_below(129)) / 256.0;
    cloud.points.emplace_back(x, y, z);
  }
  return cloud;
}

ModelConfig tiny_model_config() {
  ModelConfig config;
  config.encoder.d_model = 8;
  config.encoder.layers = 1;
  config.encoder.heads = 2;
  config.d_latent = 8;
  config.n_groups = 6;
  config.group_k = 16;
  return config;
}

TrainConfig tiny_train_config(std::uint64_t seed) {
  TrainConfig config;
  config.lr = 0.02;
  config.epochs = 8;
  config.batch_size = 8;
  config.seed = seed;
  config.model = tiny_model_config();
  config.model.n_groups = 0;  // size rule: 16 groups on 400 point plates
  return config;
}

// The production forward for one conditioning row, rebuilt from the public
// pieces. Used to cross-check the marginalized composition.
std::vector<double> single_signal_probabilities(CINetModel& model, const CloudGeometry& geometry,
                                                const Tensor& signal) {
  Tape tape;
  EncodedGroups enc = encode_groups(tape, geometry.groups, model.encoder);
  Var all_tokens = enc.tokens_flat;
  if (geometry.orphan_local.rows > 0) {
    Var orphan = embed_tokens(tape, tape.input(geometry.orphan_local), enc.embed_w, enc.embed_b);
    all_tokens = tape.concat_rows({enc.tokens_flat, orphan});
  }
  Var point_tokens = tape.gather_rows(all_tokens, geometry.token_row);
  HeadForward fwd = head_forward(tape, enc.embeddings, tape.input(signal), model.head);
  Var logits = point_logits(tape, fwd, point_tokens, geometry.groups.assignment, model.head);
  Var probs = tape.sigmoid(logits);
  std::vector<double> out(static_cast<std::size_t>(probs.rows()));
  for (int i = 0; i < probs.rows(); ++i) out[static_cast<std::size_t>(i)] = probs.value()(i, 0);
  return out;
}

std::vector<Eigen::Vector3d> scattered_quality_samples(int n, std::uint64_t seed) {
  Xoshiro256pp rng(seed);
  std::vector<Eigen::Vector3d> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    samples.emplace_back(rng.uniform(0.5, 4.0), rng.uniform(0.3, 0.9), rng.uniform(0.4, 1.0));
  }
  return samples;
}

}  // namespace

TEST_CASE("group count rule and model config validation") {
  ModelConfig config = tiny_model_config();
  config.n_groups = 0;
  CHECK(config.groups_for(20000) == 512);
  CHECK(config.groups_for(16384) == 512);
  CHECK(config.groups_for(400) == 16);   // max(16, 400 / 32)
  CHECK(config.groups_for(8000) == 250);
  CHECK(config.groups_for(10) == 10);    // clamped to the cloud
  config.n_groups = 1000;
  CHECK(config.groups_for(300) == 300);
  CHECK_THROWS_AS(config.groups_for(0), std::invalid_argument);

  ModelConfig bad = tiny_model_config();
  bad.d_latent = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_model_config();
  bad.group_k = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_model_config();
  bad.encoder.d_model = 9;  // not divisible by heads = 2
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("model init is seed deterministic and exposes the active variant") {
  ModelConfig config = tiny_model_config();
  CINetModel a = CINetModel::init(config, 42);
  CINetModel b = CINetModel::init(config, 42);
  CINetModel c = CINetModel::init(config, 43);

  auto pa = a.parameters();
  auto pb = b.parameters();
  auto pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(tensors_equal(pa[i]->value, pb[i]->value));
    if (!tensors_equal(pa[i]->value, pc[i]->value)) any_differs = true;
  }
  CHECK(any_differs);

  // Transformer + attention: encoder.* plus the query/key/value head block.
  bool has_encoder = false, has_query = false, has_fuse = false;
  for (Parameter* p : pa) {
    if (p->name.rfind("encoder.", 0) == 0) has_encoder = true;
    if (p->name == "head.q.w") has_query = true;
    if (p->name == "head.fuse.w") has_fuse = true;
  }
  CHECK(has_encoder);
  CHECK(has_query);
  CHECK(!has_fuse);

  config.sr = SrVariant::mlp;
  config.fusion = FusionVariant::concat;
  CINetModel d = CINetModel::init(config, 42);
  bool has_mlp = false;
  has_query = has_fuse = false;
  for (Parameter* p : d.parameters()) {
    if (p->name.rfind("mlp_encoder.", 0) == 0) has_mlp = true;
    if (p->name == "head.q.w") has_query = true;
    if (p->name == "head.fuse.w") has_fuse = true;
  }
  CHECK(has_mlp);
  CHECK(has_fuse);
  CHECK(!has_query);
}

TEST_CASE("variant names round trip and reject junk") {
  CHECK(sr_variant_from(to_string(SrVariant::mlp)) == SrVariant::mlp);
  CHECK(qa_variant_from(to_string(QaVariant::raw_vector)) == QaVariant::raw_vector);
  CHECK(fusion_variant_from(to_string(FusionVariant::concat)) == FusionVariant::concat);
  CHECK(intervention_mode_from(to_string(InterventionMode::plugin)) == InterventionMode::plugin);
  CHECK(to_string(QaVariant::raw_vector) == "raw-vector");
  CHECK_THROWS_AS(sr_variant_from("cnn"), std::invalid_argument);
  CHECK_THROWS_AS(intervention_mode_from(""), std::invalid_argument);
}

TEST_CASE("conditioning signals per quality mode") {
  ModelConfig config = tiny_model_config();
  const auto samples = scattered_quality_samples(60, 3);
  const Eigen::Vector3d probe(1.7, 0.6, 0.8);

  SUBCASE("raw vector standardizes the masked features and zeroes the density slot") {
    config.qa = QaVariant::raw_vector;
    config.feature_mask = {true, false, true};
    CINetModel model = CINetModel::init(config, 1);
    model.gmm = standardizer_only(samples);
    model.feature_fill = {0.0, 0.55, 0.0};

    const auto signals = conditioning_signals(model, probe);
    REQUIRE(signals.size() == 1);
    CHECK(signals[0].first == 1.0);
    Eigen::Vector3d masked = probe;
    masked[1] = 0.55;
    const Eigen::Vector3d z = model.gmm.standardize(masked);
    CHECK(signals[0].second(0, 0) == z.x());
    CHECK(signals[0].second(0, 1) == z.y());
    CHECK(signals[0].second(0, 2) == z.z());
    CHECK(signals[0].second(0, 3) == 0.0);
  }

  SUBCASE("plugin conditions on the cloud's own standardized features") {
    config.intervention = InterventionMode::plugin;
    CINetModel model = CINetModel::init(config, 1);
    model.gmm = gmm_fit_standardized(samples, 2, {.seed = 5});

    const auto signals = conditioning_signals(model, probe);
    REQUIRE(signals.size() == 1);
    CHECK(signals[0].first == 1.0);
    const Eigen::Vector3d z = model.gmm.standardize(probe);
    CHECK(signals[0].second(0, 0) == z.x());
    CHECK(signals[0].second(0, 3) ==
          doctest::Approx(gmm_log_density_standardized(model.gmm, z)).epsilon(1e-14));
  }

  SUBCASE("marginalize emits one row per component at the component mean") {
    config.intervention = InterventionMode::marginalize;
    CINetModel model = CINetModel::init(config, 1);
    model.gmm = gmm_fit_standardized(samples, 3, {.seed = 5});

    const auto signals = conditioning_signals(model, probe);
    REQUIRE(signals.size() == 3);
    double weight_sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      CHECK(signals[static_cast<std::size_t>(k)].first == model.gmm.weights[static_cast<std::size_t>(k)]);
      weight_sum += signals[static_cast<std::size_t>(k)].first;
      const Eigen::Vector3d& mu = model.gmm.means[static_cast<std::size_t>(k)];
      const Tensor& row = signals[static_cast<std::size_t>(k)].second;
      CHECK(row(0, 0) == mu.x());
      CHECK(row(0, 1) == mu.y());
      CHECK(row(0, 2) == mu.z());
      CHECK(row(0, 3) ==
            doctest::Approx(gmm_log_density_standardized(model.gmm, mu)).epsilon(1e-14));
    }
    CHECK(weight_sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("gmm modes without a fitted mixture are rejected") {
    CINetModel model = CINetModel::init(config, 1);
    CHECK_THROWS_AS(conditioning_signals(model, probe), std::invalid_argument);
  }
}

TEST_CASE("weighted cross entropy matches the closed forms") {
  SUBCASE("perfect predictions cost essentially nothing") {
    Tape tape;
    Tensor p(4, 1);
    p(0, 0) = 1.0;
    p(1, 0) = 0.0;
    p(2, 0) = 1.0;
    p(3, 0) = 0.0;
    const Var loss = compute_loss(tape, tape.input(p), {1, 0, 1, 0}, 7.0);
    CHECK(std::abs(loss.value()(0, 0)) < 1e-6);
  }

  SUBCASE("a coin flip costs ln 2") {
    Tape tape;
    const Var loss =
        compute_loss(tape, tape.input(Tensor::full(3, 1, 0.5)), {1, 0, 1}, 1.0);
    CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("random probabilities match a direct evaluation") {
    Xoshiro256pp rng(11);
    const int n = 40;
    Tensor p(n, 1);
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < n; ++i) {
      p(i, 0) = rng.uniform(0.01, 0.99);
      labels.push_back(rng.next_below(2) ? 1 : 0);
    }
    const double w = 3.5;
    double want = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double wi = y > 0 ? w : 1.0;
      want += wi * (-y * std::log(p(i, 0) + 1e-15) - (1.0 - y) * std::log(1.0 - p(i, 0) + 1e-15));
    }
    want /= n;
    Tape tape;
    const Var loss = compute_loss(tape, tape.input(p), labels, w);
    CHECK(loss.value()(0, 0) == doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("malformed inputs are rejected") {
    Tape tape;
    const Var two_cols = tape.input(Tensor::zeros(3, 2));
    CHECK_THROWS_AS(compute_loss(tape, two_cols, {1, 0, 1}, 1.0), std::invalid_argument);
    const Var col = tape.input(Tensor::full(3, 1, 0.5));
    CHECK_THROWS_AS(compute_loss(tape, col, {1, 0}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(compute_loss(tape, col, {1, 0, 1}, 0.0), std::invalid_argument);
  }
}

TEST_CASE("marginalized prediction is the mixture weighted sum of component passes") {
  ModelConfig config = tiny_model_config();
  config.intervention = InterventionMode::marginalize;
  CINetModel model = CINetModel::init(config, 21);
  model.gmm = gmm_fit_standardized(scattered_quality_samples(60, 7), 3, {.seed = 9});

  const PointCloud cloud = plate(31);
  const CloudGeometry geometry = prepare_cloud(cloud, config);

  Tensor merged;
  {
    Tape tape;
    merged = model_forward(tape, model, geometry).probabilities.value();
  }

  const auto signals = conditioning_signals(model, geometry.quality);
  REQUIRE(signals.size() == 3);
  std::vector<double> expected(cloud.size(), 0.0);
  for (const auto& [weight, signal] : signals) {
    const std::vector<double> pass = single_signal_probabilities(model, geometry, signal);
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += weight * pass[i];
  }

  REQUIRE(merged.rows == static_cast<int>(cloud.size()));
  for (int i = 0; i < merged.rows; ++i) {
    CHECK(std::abs(merged(i, 0) - expected[static_cast<std::size_t>(i)]) <= 1e-12);
  }
}

TEST_CASE("a single component mixture degenerates to the plugin at its mean") {
  ModelConfig config = tiny_model_config();
  config.intervention = InterventionMode::marginalize;
  CINetModel model = CINetModel::init(config, 23);
  model.gmm = gmm_fit_standardized(scattered_quality_samples(40, 13), 1, {.seed = 3});

  const PointCloud cloud = plate(37);
  CloudGeometry geometry = prepare_cloud(cloud, config);

  Tensor marginalized;
  {
    Tape tape;
    marginalized = model_forward(tape, model, geometry).probabilities.value();
  }

  CINetModel plugin = model;
  plugin.config.intervention = InterventionMode::plugin;
  CloudGeometry at_mean = geometry;
  at_mean.quality = model.gmm.unstandardize(model.gmm.means[0]);
  Tensor plugged;
  {
    Tape tape;
    plugged = model_forward(tape, plugin, at_mean).probabilities.value();
  }

  for (int i = 0; i < marginalized.rows; ++i) {
    CHECK(std::abs(marginalized(i, 0) - plugged(i, 0)) <= 1e-12);
  }
}

TEST_CASE("dyadic translation leaves geometry and prediction bit identical") {
  ModelConfig config = tiny_model_config();
  config.qa = QaVariant::raw_vector;
  config.feature_mask = {false, false, false};  // constant signal: isolates the network path
  CINetModel model = CINetModel::init(config, 29);

  const PointCloud base = dyadic_cloud(200, 17);
  PointCloud moved = base;
  for (auto& p : moved.points) p += Eigen::Vector3d(512.0, 1024.0, 2048.0);

  const CloudGeometry ga = prepare_cloud(base, config);
  const CloudGeometry gb = prepare_cloud(moved, config);

  REQUIRE(ga.groups.keypoints == gb.groups.keypoints);
  REQUIRE(ga.groups.members == gb.groups.members);
  CHECK(ga.groups.assignment == gb.groups.assignment);
  CHECK(ga.token_row == gb.token_row);
  for (std::size_t gi = 0; gi < ga.groups.local.size(); ++gi) {
    for (std::size_t s = 0; s < ga.groups.local[gi].size(); ++s) {
      CHECK(same_vec(ga.groups.local[gi][s], gb.groups.local[gi][s]));  // exact cancellation
    }
  }
  CHECK(tensors_equal(ga.orphan_local, gb.orphan_local));

  Tensor pa, pb;
  {
    Tape tape;
    pa = model_forward(tape, model, ga).probabilities.value();
  }
  {
    Tape tape;
    pb = model_forward(tape, model, gb).probabilities.value();
  }
  CHECK(tensors_equal(pa, pb));
}

TEST_CASE("point order shuffling permutes the prediction with it") {
  ModelConfig config = tiny_model_config();
  config.qa = QaVariant::raw_vector;
  CINetModel model = CINetModel::init(config, 31);

  PointCloud base;
  {
    Xoshiro256pp rng(19);
    for (int i = 0; i < 200; ++i) {
      base.points.emplace_back(rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0),
                               rng.uniform(0.0, 0.5));
    }
  }

  std::vector<int> perm(base.points.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  Xoshiro256pp rng(23);
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.next_below(i))]);
  }
  PointCloud shuffled;
  std::vector<int> inv(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) {
    shuffled.points.push_back(base.points[static_cast<std::size_t>(perm[j])]);
    inv[static_cast<std::size_t>(perm[j])] = static_cast<int>(j);
  }

  const CloudGeometry ga = prepare_cloud(base, config);
  const CloudGeometry gb = prepare_cloud(shuffled, config);

  // The quality summary is canonicalized internally, so reordering the same
  // points must not move it at all.
  CHECK(same_vec(ga.quality, gb.quality));

  Tensor pa, pb;
  {
    Tape tape;
    pa = model_forward(tape, model, ga).probabilities.value();
  }
  {
    Tape tape;
    pb = model_forward(tape, model, gb).probabilities.value();
  }
  for (std::size_t i = 0; i < perm.size(); ++i) {
    CHECK(std::abs(pa(static_cast<int>(i), 0) - pb(inv[i], 0)) <= 1e-12);
  }
}

TEST_CASE("permuting group order permutes attention and preserves predictions") {
  ModelConfig config = tiny_model_config();
  config.qa = QaVariant::raw_vector;
  CINetModel model = CINetModel::init(config, 37);

  const PointCloud cloud = plate(41);
  const CloudGeometry geometry = prepare_cloud(cloud, config);
  const int g = geometry.groups.group_count();
  REQUIRE(g >= 4);

  std::vector<int> perm(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) perm[static_cast<std::size_t>(i)] = (i + 3) % g;
  std::vector<int> inv(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;

  CloudGeometry moved = geometry;
  for (int gn = 0; gn < g; ++gn) {
    const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(gn)]);
    moved.groups.keypoints[static_cast<std::size_t>(gn)] = geometry.groups.keypoints[src];
    moved.groups.members[static_cast<std::size_t>(gn)] = geometry.groups.members[src];
    moved.groups.local[static_cast<std::size_t>(gn)] = geometry.groups.local[src];
  }
  const int k = geometry.groups.k;
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    const int old_group = geometry.groups.assignment[p];
    moved.groups.assignment[p] = inv[static_cast<std::size_t>(old_group)];
    if (geometry.groups.member_slot[p] >= 0) {
      moved.token_row[p] =
          inv[static_cast<std::size_t>(old_group)] * k + geometry.groups.member_slot[p];
    }
  }

  Tensor pa, aa, pb, ab;
  {
    Tape tape;
    const ForwardVars fwd = model_forward(tape, model, geometry);
    pa = fwd.probabilities.value();
    aa = fwd.attention.value();
  }
  {
    Tape tape;
    const ForwardVars fwd = model_forward(tape, model, moved);
    pb = fwd.probabilities.value();
    ab = fwd.attention.value();
  }

  for (int i = 0; i < pa.rows; ++i) CHECK(std::abs(pa(i, 0) - pb(i, 0)) <= 1e-12);
  for (int gi = 0; gi < g; ++gi) {
    CHECK(std::abs(aa(0, gi) - ab(0, inv[static_cast<std::size_t>(gi)])) <= 1e-12);
  }
}

TEST_CASE("checkpoints restore every field bit for bit") {
  TempDir dir("ckpt");
  ModelConfig config = tiny_model_config();
  config.gmm_components = 2;
  CINetModel model = CINetModel::init(config, 47);
  model.gmm = gmm_fit_standardized(scattered_quality_samples(50, 17), 2, {.seed = 11});
  model.feature_fill = {0.25, 0.5, 0.75};
  model.trained = true;

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(model, path);
  CINetModel loaded = load_checkpoint(path);

  CHECK(to_string(loaded.config.sr) == to_string(model.config.sr));
  CHECK(to_string(loaded.config.qa) == to_string(model.config.qa));
  CHECK(to_string(loaded.config.fusion) == to_string(model.config.fusion));
  CHECK(to_string(loaded.config.intervention) == to_string(model.config.intervention));
  CHECK(loaded.config.encoder.d_model == config.encoder.d_model);
  CHECK(loaded.config.encoder.layers == config.encoder.layers);
  CHECK(loaded.config.encoder.heads == config.encoder.heads);
  CHECK(loaded.config.d_latent == config.d_latent);
  CHECK(loaded.config.n_groups == config.n_groups);
  CHECK(loaded.config.group_k == config.group_k);
  CHECK(loaded.config.feature_mask == config.feature_mask);
  CHECK(loaded.feature_fill == model.feature_fill);
  CHECK(loaded.trained);

  auto pa = model.parameters();
  auto pb = loaded.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(tensors_equal(pa[i]->value, pb[i]->value));
  }

  REQUIRE(loaded.gmm.K == 2);
  for (int c = 0; c < 2; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    CHECK(loaded.gmm.weights[ci] == model.gmm.weights[ci]);
    CHECK(same_vec(loaded.gmm.means[ci], model.gmm.means[ci]));
    CHECK(same_mat(loaded.gmm.covariances[ci], model.gmm.covariances[ci]));
  }
  CHECK(same_vec(loaded.gmm.standardize_mean, model.gmm.standardize_mean));
  CHECK(same_vec(loaded.gmm.standardize_scale, model.gmm.standardize_scale));

  // Saving the loaded model reproduces the file byte for byte.
  const std::string again = dir.file("model2.ckpt");
  save_checkpoint(loaded, again);
  CHECK(read_file(path) == read_file(again));
}

TEST_CASE("mlp concat checkpoints round trip too") {
  TempDir dir("ckpt_mlp");
  ModelConfig config = tiny_model_config();
  config.sr = SrVariant::mlp;
  config.qa = QaVariant::raw_vector;
  config.fusion = FusionVariant::concat;
  CINetModel model = CINetModel::init(config, 53);
  model.gmm = standardizer_only(scattered_quality_samples(20, 19));
  model.trained = true;

  const std::string path = dir.file("mlp.ckpt");
  save_checkpoint(model, path);
  CINetModel loaded = load_checkpoint(path);
  CHECK(loaded.config.sr == SrVariant::mlp);
  CHECK(loaded.config.fusion == FusionVariant::concat);
  CHECK(loaded.gmm.K == 0);
  CHECK(same_vec(loaded.gmm.standardize_scale, model.gmm.standardize_scale));
  auto pa = model.parameters();
  auto pb = loaded.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(tensors_equal(pa[i]->value, pb[i]->value));
  }
}

TEST_CASE("unreadable checkpoints raise errors that name the file") {
  TempDir dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), std::runtime_error);
  const std::string junk = dir.file("junk.ckpt");
  {
    std::ofstream out(junk);
    out << "not a checkpoint\n";
  }
  CHECK_THROWS_AS(load_checkpoint(junk), std::runtime_error);
}

TEST_CASE("training on tiny plates") {
  std::vector<LabeledCloud> train_set, val_set, test_set;
  for (std::uint64_t s = 0; s < 4; ++s) train_set.push_back({"t" + std::to_string(s), plate(100 + s)});
  for (std::uint64_t s = 0; s < 2; ++s) val_set.push_back({"v" + std::to_string(s), plate(200 + s)});
  for (std::uint64_t s = 0; s < 2; ++s) test_set.push_back({"e" + std::to_string(s), plate(300 + s)});

  SUBCASE("zero learning rate never moves the weights") {
    TempDir dir("lr0");
    TrainConfig one = tiny_train_config(5);
    one.lr = 0.0;
    one.epochs = 1;
    TrainConfig three = one;
    three.epochs = 3;

    auto [model_one, report_one] = train(train_set, val_set, one);
    auto [model_three, report_three] = train(train_set, val_set, three);
    CHECK(report_one.train_loss.size() == 1);
    CHECK(report_three.train_loss.size() == 3);
    CHECK(report_three.train_loss[0] == report_three.train_loss[1]);

    save_checkpoint(model_one, dir.file("one.ckpt"));
    save_checkpoint(model_three, dir.file("three.ckpt"));
    CHECK(read_file(dir.file("one.ckpt")) == read_file(dir.file("three.ckpt")));
  }

  SUBCASE("patience stops a stalled run") {
    TrainConfig config = tiny_train_config(5);
    config.lr = 0.0;  // validation mIoU is frozen, so the run must stop early
    config.epochs = 10;
    config.patience = 2;
    auto [model, report] = train(train_set, val_set, config);
    CHECK(report.train_loss.size() == 3);
    CHECK(report.val_miou.size() == 3);
    CHECK(report.best_epoch == 0);
    CHECK(report.best_val_miou == report.val_miou[0]);
  }

  SUBCASE("the same seed reproduces the checkpoint byte for byte") {
    TempDir dir("repro");
    TrainConfig config = tiny_train_config(7);
    config.epochs = 2;
    config.model.qa = QaVariant::gmm;
    config.model.gmm_components = 1;
    config.model.intervention = InterventionMode::marginalize;

    auto [model_a, report_a] = train(train_set, val_set, config);
    auto [model_b, report_b] = train(train_set, val_set, config);
    CHECK(report_a.train_loss == report_b.train_loss);
    CHECK(report_a.val_miou == report_b.val_miou);
    save_checkpoint(model_a, dir.file("a.ckpt"));
    save_checkpoint(model_b, dir.file("b.ckpt"));
    CHECK(read_file(dir.file("a.ckpt")) == read_file(dir.file("b.ckpt")));
  }

  SUBCASE("the loss comes down and the report stays consistent") {
    TrainConfig config = tiny_train_config(9);
    auto [model, report] = train(train_set, val_set, config);
    REQUIRE(report.train_loss.size() == 8);
    REQUIRE(report.val_miou.size() == 8);
    CHECK(report.train_loss.back() < report.train_loss.front());
    CHECK(report.best_val_miou ==
          *std::max_element(report.val_miou.begin(), report.val_miou.end()));
    CHECK(report.best_epoch >= 0);
    CHECK(report.best_epoch < 8);
    CHECK(report.val_miou[static_cast<std::size_t>(report.best_epoch)] == report.best_val_miou);
    CHECK(report.wall_seconds > 0.0);
    CHECK(model.trained);
  }

  SUBCASE("evaluation is unchanged by a checkpoint round trip") {
    TempDir dir("eval");
    TrainConfig config = tiny_train_config(11);
    config.epochs = 3;
    auto [model, report] = train(train_set, val_set, config);

    const MetricsReport before = evaluate(test_set, model);
    save_checkpoint(model, dir.file("m.ckpt"));
    CINetModel loaded = load_checkpoint(dir.file("m.ckpt"));
    const MetricsReport after = evaluate(test_set, loaded);

    CHECK(before.miou == after.miou);
    CHECK(before.map == after.map);
    CHECK(before.macc == after.macc);
    CHECK(before.oa == after.oa);
    CHECK(before.defect.iou == after.defect.iou);
    CHECK(before.normal.iou == after.normal.iou);
    CHECK(before.macro_miou == after.macro_miou);
    REQUIRE(before.per_cloud.size() == after.per_cloud.size());
    for (std::size_t i = 0; i < before.per_cloud.size(); ++i) {
      CHECK(before.per_cloud[i].miou == after.per_cloud[i].miou);
    }
  }
}

TEST_CASE("a zeroed scoring head predicts a coin flip everywhere") {
  ModelConfig config = tiny_model_config();
  config.sr = SrVariant::mlp;
  config.qa = QaVariant::raw_vector;
  CINetModel model = CINetModel::init(config, 59);
  model.head.head_global_w.value = Tensor::zeros(config.d_latent, 1);
  model.head.head_group_w.value = Tensor::zeros(config.d_latent, 1);
  model.head.head_token_w.value = Tensor::zeros(config.encoder.d_model, 1);
  model.head.head_b.value = Tensor::zeros(1, 1);
  model.trained = true;

  const PointCloud clean = plate(401, false);  // all points labelled normal
  const PointPrediction prediction = intervene_predict(model, clean);
  for (double p : prediction.probabilities) CHECK(p == 0.5);
  for (double l : prediction.logits) CHECK(l == 0.0);

  std::vector<LabeledCloud> clouds;
  clouds.push_back({"clean-a", clean});
  clouds.push_back({"clean-b", plate(402, false)});
  const MetricsReport report = evaluate(clouds, model);
  CHECK(report.oa == 1.0);
  CHECK(report.normal.iou == 1.0);
  CHECK(report.defect.iou == 0.0);
  CHECK(report.defect.iou_flagged);
  CHECK(report.defect.recall_flagged);
  CHECK(report.miou == 0.5);
  CHECK(report.any_zero_denominator);
}

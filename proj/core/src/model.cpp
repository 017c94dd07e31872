#include "cinet/model.hpp"

#include "cinet/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cinet {

std::string to_string(SrVariant v) { return v == SrVariant::transformer ? "transformer" : "mlp"; }
std::string to_string(QaVariant v) { return v == QaVariant::gmm ? "gmm" : "raw-vector"; }
std::string to_string(FusionVariant v) {
  return v == FusionVariant::attention ? "attention" : "concat";
}
std::string to_string(InterventionMode v) {
  return v == InterventionMode::plugin ? "plugin" : "marginalize";
}

namespace {

[[noreturn]] void bad_variant(const char* what, const std::string& s) {
  throw std::invalid_argument(std::string(what) + ": unknown value '" + s + "'");
}

}  // namespace

SrVariant sr_variant_from(const std::string& s) {
  if (s == "transformer") return SrVariant::transformer;
  if (s == "mlp") return SrVariant::mlp;
  bad_variant("sr variant", s);
}
QaVariant qa_variant_from(const std::string& s) {
  if (s == "gmm") return QaVariant::gmm;
  if (s == "raw-vector") return QaVariant::raw_vector;
  bad_variant("qa variant", s);
}
FusionVariant fusion_variant_from(const std::string& s) {
  if (s == "attention") return FusionVariant::attention;
  if (s == "concat") return FusionVariant::concat;
  bad_variant("fusion variant", s);
}
InterventionMode intervention_mode_from(const std::string& s) {
  if (s == "plugin") return InterventionMode::plugin;
  if (s == "marginalize") return InterventionMode::marginalize;
  bad_variant("intervention mode", s);
}

int ModelConfig::groups_for(int cloud_size) const {
  if (cloud_size < 1) throw std::invalid_argument("groups_for: empty cloud");
  int g;
  if (n_groups > 0) {
    g = n_groups;
  } else if (cloud_size >= 16384) {
    g = 512;
  } else {
    g = std::max(16, cloud_size / 32);
  }
  return std::min(g, cloud_size);
}

void ModelConfig::validate() const {
  encoder.validate();
  if (d_latent < 1) throw std::invalid_argument("model config: d_latent must be positive");
  if (n_groups < 0) throw std::invalid_argument("model config: n_groups must be >= 0");
  if (group_k < 1) throw std::invalid_argument("model config: group_k must be positive");
  if (gmm_components < 0) throw std::invalid_argument("model config: gmm_components must be >= 0");
  if (gmm_k_max < 1) throw std::invalid_argument("model config: gmm_k_max must be positive");
}

CINetModel CINetModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  CINetModel model;
  model.config = config;
  if (config.sr == SrVariant::transformer) {
    model.encoder = EncoderParams::init(config.encoder, derive_seed(seed, 1));
  } else {
    model.mlp_encoder = MlpEncoderParams::init(config.encoder, derive_seed(seed, 1));
  }
  HeadConfig head_config{.d_model = config.encoder.d_model,
                         .d_latent = config.d_latent,
                         .signal_dim = 4};
  model.head =
      HeadParams::init(head_config, config.fusion == FusionVariant::attention, derive_seed(seed, 2));
  return model;
}

std::vector<Parameter*> CINetModel::parameters() {
  std::vector<Parameter*> out = config.sr == SrVariant::transformer ? encoder.parameters()
                                                                    : mlp_encoder.parameters();
  for (Parameter* p : head.parameters()) out.push_back(p);
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_tensor(std::ostream& out, const Parameter& p) {
  out << "tensor " << p.name << ' ' << p.value.rows << ' ' << p.value.cols << '\n';
  for (int r = 0; r < p.value.rows; ++r) {
    for (int c = 0; c < p.value.cols; ++c) {
      if (c) out << ' ';
      out << fmt(p.value(r, c));
    }
    out << '\n';
  }
}

}  // namespace

void save_checkpoint(const CINetModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "' for writing");
  out << "cinet-checkpoint v1\n";
  out << "[config]\n";
  const ModelConfig& c = model.config;
  out << "sr " << to_string(c.sr) << '\n';
  out << "qa " << to_string(c.qa) << '\n';
  out << "fusion " << to_string(c.fusion) << '\n';
  out << "intervention " << to_string(c.intervention) << '\n';
  out << "d_model " << c.encoder.d_model << '\n';
  out << "layers " << c.encoder.layers << '\n';
  out << "heads " << c.encoder.heads << '\n';
  out << "d_ff " << c.encoder.d_ff << '\n';
  out << "d_latent " << c.d_latent << '\n';
  out << "n_groups " << c.n_groups << '\n';
  out << "group_k " << c.group_k << '\n';
  out << "gmm_components " << c.gmm_components << '\n';
  out << "gmm_k_max " << c.gmm_k_max << '\n';
  out << "feature_mask " << c.feature_mask[0] << ' ' << c.feature_mask[1] << ' '
      << c.feature_mask[2] << '\n';
  out << "feature_fill " << fmt(model.feature_fill[0]) << ' ' << fmt(model.feature_fill[1]) << ' '
      << fmt(model.feature_fill[2]) << '\n';
  out << "quality.kde_bandwidth " << fmt(c.quality.kde_bandwidth) << '\n';
  out << "quality.kde_rel_tol " << fmt(c.quality.kde_rel_tol) << '\n';
  out << "quality.grid_resolution " << c.quality.grid_resolution << '\n';
  out << "quality.normal_k " << c.quality.normal_k << '\n';
  out << "quality.integrity_k " << c.quality.integrity_k << '\n';
  out << "trained " << (model.trained ? 1 : 0) << '\n';
  out << "[gmm]\n";
  write_gmm(out, model.gmm);

  // parameters() needs a mutable model; the copy is cheap relative to I/O.
  CINetModel snapshot = model;
  const std::vector<Parameter*> params = snapshot.parameters();
  out << "[tensors]\n";
  out << "count " << params.size() << '\n';
  for (const Parameter* p : params) write_tensor(out, *p);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

CINetModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  const std::string context = "checkpoint '" + path + "'";
  auto fail = [&](const std::string& what) -> std::runtime_error {
    return std::runtime_error("load_checkpoint: " + what + " in " + context);
  };
  auto expect = [&](const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want) throw fail("expected '" + want + "'");
  };

  std::string magic, version;
  in >> magic >> version;
  if (magic != "cinet-checkpoint" || version != "v1") {
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a cinet checkpoint");
  }

  expect("[config]");
  ModelConfig config;
  std::array<double, 3> fill{};
  int trained = 0;
  std::string value;
  expect("sr");
  in >> value;
  config.sr = sr_variant_from(value);
  expect("qa");
  in >> value;
  config.qa = qa_variant_from(value);
  expect("fusion");
  in >> value;
  config.fusion = fusion_variant_from(value);
  expect("intervention");
  in >> value;
  config.intervention = intervention_mode_from(value);
  expect("d_model");
  in >> config.encoder.d_model;
  expect("layers");
  in >> config.encoder.layers;
  expect("heads");
  in >> config.encoder.heads;
  expect("d_ff");
  in >> config.encoder.d_ff;
  expect("d_latent");
  in >> config.d_latent;
  expect("n_groups");
  in >> config.n_groups;
  expect("group_k");
  in >> config.group_k;
  expect("gmm_components");
  in >> config.gmm_components;
  expect("gmm_k_max");
  in >> config.gmm_k_max;
  expect("feature_mask");
  for (int i = 0; i < 3; ++i) {
    int flag = 0;
    in >> flag;
    config.feature_mask[i] = flag != 0;
  }
  expect("feature_fill");
  for (int i = 0; i < 3; ++i) in >> fill[i];
  expect("quality.kde_bandwidth");
  in >> config.quality.kde_bandwidth;
  expect("quality.kde_rel_tol");
  in >> config.quality.kde_rel_tol;
  expect("quality.grid_resolution");
  in >> config.quality.grid_resolution;
  expect("quality.normal_k");
  in >> config.quality.normal_k;
  expect("quality.integrity_k");
  in >> config.quality.integrity_k;
  expect("trained");
  in >> trained;
  if (!in) throw fail("truncated config section");

  expect("[gmm]");
  GmmModel gmm = read_gmm(in, context);

  CINetModel model = CINetModel::init(config, 0);
  model.gmm = std::move(gmm);
  model.feature_fill = fill;
  model.trained = trained != 0;

  expect("[tensors]");
  expect("count");
  std::size_t count = 0;
  in >> count;
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  if (count != by_name.size()) {
    throw fail("tensor count " + std::to_string(count) + " != expected " +
               std::to_string(by_name.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    expect("tensor");
    std::string name;
    int rows = 0, cols = 0;
    in >> name >> rows >> cols;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw fail("unknown tensor '" + name + "'");
    Parameter& p = *it->second;
    if (rows != p.value.rows || cols != p.value.cols) {
      throw fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                 std::to_string(cols) + ", expected " + p.value.shape_str());
    }
    for (int r = 0; r < rows; ++r)
      for (int col = 0; col < cols; ++col) in >> p.value(r, col);
  }
  if (!in) throw fail("truncated tensor section");
  return model;
}

}  // namespace cinet

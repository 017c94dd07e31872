#include "cinet/optimizer.hpp"

#include "cinet/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace cinet {

Tensor kaiming_init(int rows, int cols, int fan_in, uint64_t seed) {
  if (rows < 1 || cols < 1 || fan_in < 1)
    throw std::invalid_argument("kaiming_init: rows, cols and fan_in must be >= 1");
  Tensor t(rows, cols);
  Xoshiro256pp rng(seed);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = sd * rng.next_gaussian();
  return t;
}

Adam::Adam(std::vector<Parameter*> params, const AdamConfig& config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    if (p == nullptr) throw std::invalid_argument("Adam: null parameter");
    m_.push_back(Tensor::zeros(p->value.rows, p->value.cols));
    v_.push_back(Tensor::zeros(p->value.rows, p->value.cols));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_)
    std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, t_);
  const double bc2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    if (!p.grad.same_shape(p.value))
      throw std::runtime_error("Adam::step: gradient shape mismatch for '" + p.name + "'");
    assert_finite(p.grad, "Adam::step gradient");
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = p.grad.data[i];
      m_[pi].data[i] = config_.beta1 * m_[pi].data[i] + (1.0 - config_.beta1) * g;
      v_[pi].data[i] = config_.beta2 * v_[pi].data[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m_[pi].data[i] / bc1;
      const double vhat = v_[pi].data[i] / bc2;
      p.value.data[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace cinet

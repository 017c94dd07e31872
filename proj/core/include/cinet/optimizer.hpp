#pragma once

#include "cinet/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cinet {

// Learnable tensor. The tape accumulates into grad during backward; the
// optimizer consumes grad and updates value. Names key checkpoint entries.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.rows, value.cols)) {}
};

// N(0, 2/fan_in) entries from the seeded generator; used for weight matrices.
// Biases are zero-initialised by construction.
Tensor kaiming_init(int rows, int cols, int fan_in, uint64_t seed);

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected first/second moment update. Parameter registration
// order is fixed at construction and determines nothing except bookkeeping;
// updates are elementwise.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const AdamConfig& config);

  void zero_grad();
  void step();  // applies param.grad; a zero gradient leaves the value bitwise intact
  int steps_taken() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

}  // namespace cinet

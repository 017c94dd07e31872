#pragma once

#include "cinet/optimizer.hpp"
#include "cinet/tensor.hpp"

#include <functional>
#include <vector>

namespace cinet {

class Tape;

// Handle into a tape node. Cheap to copy; only valid for the tape that made it.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  int rows() const;
  int cols() const;
};

// Define-by-run reverse-mode tape. A forward pass builds nodes in topological
// order; backward walks them once in reverse. The tape is single use: rebuild
// it for every forward pass, a second backward() throws. Every op checks its
// result for NaN/Inf and fails hard.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Tensor value, bool requires_grad = false);
  // Leaf bound to an external parameter; backward adds into parameter.grad.
  Var param(Parameter& p);

  Var matmul(Var a, Var b);
  // add/sub/mul accept equal shapes, or a (1,cols) row or (1,1) scalar as the
  // right operand, broadcast over rows of the left.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_scalar(Var a, double s);
  Var mul_scalar(Var a, double s);
  Var transpose(Var a);
  Var softmax_rows(Var a);     // softmax over the last axis, one simplex per row
  Var gelu(Var a);             // exact erf form
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var log(Var a);
  Var mean_all(Var a);         // -> (1,1)
  Var sum_all(Var a);          // -> (1,1)
  Var mean_rows(Var a);        // (n,c) -> (1,c), mean over rows
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<int> indices);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
  // node and bound parameter. root must be scalar. Callable once per tape.
  void backward(Var root);

  const Tensor& value_of(int id) const;
  // Gradient accumulated for v by the last backward; empty tensor when none.
  const Tensor& grad_of(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* bound = nullptr;
    std::function<void(Tape&, const Tensor&)> back;  // receives this node's grad
  };

  int check(Var v, const char* op) const;
  Var emit(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> back,
           const char* op);
  Tensor& grad_buffer(int id);
  void add_to_grad(int id, const Tensor& g);

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  friend struct Var;
};

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }

}  // namespace cinet

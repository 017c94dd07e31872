#include "cinet/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace cinet {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Right operands of add/sub/mul may be a (1,c) row or (1,1) scalar broadcast
// over the left; reductions fold a full-shape gradient back down.
enum class Broadcast { none, row, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::none;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::row;
  if (b.rows == 1 && b.cols == 1) return Broadcast::scalar;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

void accumulate_scaled(Tensor& dst, const Tensor& g, double scale) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * g.data[i];
}

// dst has the (possibly broadcast) operand's shape; g has the result's shape.
void reduce_into(Tensor& dst, const Tensor& g, double scale) {
  if (dst.same_shape(g)) {
    accumulate_scaled(dst, g, scale);
    return;
  }
  if (dst.rows == 1 && dst.cols == g.cols) {
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) dst.data[j] += scale * g(i, j);
    return;
  }
  double total = 0.0;
  for (double v : g.data) total += v;
  dst.data[0] += scale * total;
}

}  // namespace

const Tensor& Var::value() const { return tape->value_of(id); }
int Var::rows() const { return value().rows; }
int Var::cols() const { return value().cols; }

int Tape::check(Var v, const char* op) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument(std::string(op) + ": variable does not belong to this tape");
  return v.id;
}

const Tensor& Tape::value_of(int id) const { return nodes_[id].value; }

const Tensor& Tape::grad_of(Var v) const {
  check(v, "grad_of");
  return nodes_[v.id].grad;
}

Tensor& Tape::grad_buffer(int id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.rows, node.value.cols);
  return node.grad;
}

void Tape::add_to_grad(int id, const Tensor& g) {
  Tensor& buf = grad_buffer(id);
  accumulate_scaled(buf, g, 1.0);
}

Var Tape::emit(Tensor value, bool requires_grad,
               std::function<void(Tape&, const Tensor&)> back, const char* op) {
  assert_finite(value, op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value, bool requires_grad) {
  if (value.empty()) throw std::invalid_argument("Tape::input: empty tensor");
  return emit(std::move(value), requires_grad, nullptr, "input");
}

Var Tape::param(Parameter& p) {
  if (p.value.empty()) throw std::invalid_argument("Tape::param: parameter '" + p.name + "' is empty");
  Var v = emit(p.value, true, nullptr, "param");
  nodes_[v.id].bound = &p;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const int ia = check(a, "matmul"), ib = check(b, "matmul");
  Tensor out;
  matmul_nn(nodes_[ia].value, nodes_[ib].value, out);
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  return emit(std::move(out), rg,
              [ia, ib](Tape& t, const Tensor& g) {
                if (t.nodes_[ia].requires_grad)
                  matmul_nt(g, t.nodes_[ib].value, t.grad_buffer(ia), true);
                if (t.nodes_[ib].requires_grad)
                  matmul_tn(t.nodes_[ia].value, g, t.grad_buffer(ib), true);
              },
              "matmul");
}

Var Tape::add(Var a, Var b) {
  const int ia = check(a, "add"), ib = check(b, "add");
  const Tensor& va = nodes_[ia].value;
  const Tensor& vb = nodes_[ib].value;
  const Broadcast bc = broadcast_kind(va, vb, "add");
  Tensor out = va;
  if (bc == Broadcast::none) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  } else if (bc == Broadcast::row) {
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) += vb(0, j);
  } else {
    for (double& v : out.data) v += vb.data[0];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  return emit(std::move(out), rg,
              [ia, ib](Tape& t, const Tensor& g) {
                if (t.nodes_[ia].requires_grad) accumulate_scaled(t.grad_buffer(ia), g, 1.0);
                if (t.nodes_[ib].requires_grad) reduce_into(t.grad_buffer(ib), g, 1.0);
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  const int ia = check(a, "sub"), ib = check(b, "sub");
  const Tensor& va = nodes_[ia].value;
  const Tensor& vb = nodes_[ib].value;
  const Broadcast bc = broadcast_kind(va, vb, "sub");
  Tensor out = va;
  if (bc == Broadcast::none) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  } else if (bc == Broadcast::row) {
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) -= vb(0, j);
  } else {
    for (double& v : out.data) v -= vb.data[0];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  return emit(std::move(out), rg,
              [ia, ib](Tape& t, const Tensor& g) {
                if (t.nodes_[ia].requires_grad) accumulate_scaled(t.grad_buffer(ia), g, 1.0);
                if (t.nodes_[ib].requires_grad) reduce_into(t.grad_buffer(ib), g, -1.0);
              },
              "sub");
}

Var Tape::mul(Var a, Var b) {
  const int ia = check(a, "mul"), ib = check(b, "mul");
  const Tensor& va = nodes_[ia].value;
  const Tensor& vb = nodes_[ib].value;
  const Broadcast bc = broadcast_kind(va, vb, "mul");
  Tensor out = va;
  if (bc == Broadcast::none) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  } else if (bc == Broadcast::row) {
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= vb(0, j);
  } else {
    for (double& v : out.data) v *= vb.data[0];
  }
  const bool rg = nodes_[ia].requires_grad || nodes_[ib].requires_grad;
  const int kind = static_cast<int>(bc);
  return emit(std::move(out), rg,
              [ia, ib, kind](Tape& t, const Tensor& g) {
                const Tensor& va = t.nodes_[ia].value;
                const Tensor& vb = t.nodes_[ib].value;
                if (t.nodes_[ia].requires_grad) {
                  Tensor& da = t.grad_buffer(ia);
                  if (kind == 0) {
                    for (std::size_t i = 0; i < da.data.size(); ++i)
                      da.data[i] += g.data[i] * vb.data[i];
                  } else if (kind == 1) {
                    for (int i = 0; i < da.rows; ++i)
                      for (int j = 0; j < da.cols; ++j) da(i, j) += g(i, j) * vb(0, j);
                  } else {
                    accumulate_scaled(da, g, vb.data[0]);
                  }
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor gxa = g;
                  for (std::size_t i = 0; i < gxa.data.size(); ++i) gxa.data[i] *= va.data[i];
                  reduce_into(t.grad_buffer(ib), gxa, 1.0);
                }
              },
              "mul");
}

Var Tape::add_scalar(Var a, double s) {
  const int ia = check(a, "add_scalar");
  Tensor out = nodes_[ia].value;
  for (double& v : out.data) v += s;
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) { accumulate_scaled(t.grad_buffer(ia), g, 1.0); },
              "add_scalar");
}

Var Tape::mul_scalar(Var a, double s) {
  const int ia = check(a, "mul_scalar");
  Tensor out = nodes_[ia].value;
  for (double& v : out.data) v *= s;
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia, s](Tape& t, const Tensor& g) { accumulate_scaled(t.grad_buffer(ia), g, s); },
              "mul_scalar");
}

Var Tape::transpose(Var a) {
  const int ia = check(a, "transpose");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.cols, va.rows);
  for (int i = 0; i < va.rows; ++i)
    for (int j = 0; j < va.cols; ++j) out(j, i) = va(i, j);
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) {
                Tensor& da = t.grad_buffer(ia);
                for (int i = 0; i < g.rows; ++i)
                  for (int j = 0; j < g.cols; ++j) da(j, i) += g(i, j);
              },
              "transpose");
}

Var Tape::softmax_rows(Var a) {
  const int ia = check(a, "softmax_rows");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.rows, va.cols);
  for (int i = 0; i < va.rows; ++i) {
    double m = va(i, 0);
    for (int j = 1; j < va.cols; ++j) m = std::max(m, va(i, j));
    double total = 0.0;
    for (int j = 0; j < va.cols; ++j) {
      out(i, j) = std::exp(va(i, j) - m);
      total += out(i, j);
    }
    for (int j = 0; j < va.cols; ++j) out(i, j) /= total;
  }
  const int out_id = static_cast<int>(nodes_.size());
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia, out_id](Tape& t, const Tensor& g) {
                const Tensor& y = t.nodes_[out_id].value;
                Tensor& da = t.grad_buffer(ia);
                for (int i = 0; i < y.rows; ++i) {
                  double dot = 0.0;
                  for (int j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
                  for (int j = 0; j < y.cols; ++j) da(i, j) += y(i, j) * (g(i, j) - dot);
                }
              },
              "softmax_rows");
}

Var Tape::gelu(Var a) {
  const int ia = check(a, "gelu");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.data.size(); ++i) {
    const double x = va.data[i];
    out.data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) {
                const Tensor& x = t.nodes_[ia].value;
                Tensor& da = t.grad_buffer(ia);
                for (std::size_t i = 0; i < x.data.size(); ++i) {
                  const double xi = x.data[i];
                  const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                  da.data[i] += g.data[i] * (cdf + xi * pdf);
                }
              },
              "gelu");
}

Var Tape::sigmoid(Var a) {
  const int ia = check(a, "sigmoid");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.data.size(); ++i) out.data[i] = stable_sigmoid(va.data[i]);
  const int out_id = static_cast<int>(nodes_.size());
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia, out_id](Tape& t, const Tensor& g) {
                const Tensor& y = t.nodes_[out_id].value;
                Tensor& da = t.grad_buffer(ia);
                for (std::size_t i = 0; i < y.data.size(); ++i)
                  da.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
              },
              "sigmoid");
}

Var Tape::softplus(Var a) {
  const int ia = check(a, "softplus");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.data.size(); ++i) {
    const double x = va.data[i];
    out.data[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) {
                const Tensor& x = t.nodes_[ia].value;
                Tensor& da = t.grad_buffer(ia);
                for (std::size_t i = 0; i < x.data.size(); ++i)
                  da.data[i] += g.data[i] * stable_sigmoid(x.data[i]);
              },
              "softplus");
}

Var Tape::log(Var a) {
  const int ia = check(a, "log");
  const Tensor& va = nodes_[ia].value;
  Tensor out(va.rows, va.cols);
  for (std::size_t i = 0; i < va.data.size(); ++i) out.data[i] = std::log(va.data[i]);
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) {
                const Tensor& x = t.nodes_[ia].value;
                Tensor& da = t.grad_buffer(ia);
                for (std::size_t i = 0; i < x.data.size(); ++i)
                  da.data[i] += g.data[i] / x.data[i];
              },
              "log");
}

Var Tape::mean_all(Var a) {
  const int ia = check(a, "mean_all");
  const Tensor& va = nodes_[ia].value;
  double total = 0.0;
  for (double v : va.data) total += v;
  const double inv = 1.0 / static_cast<double>(va.numel());
  return emit(Tensor::scalar(total * inv), nodes_[ia].requires_grad,
              [ia, inv](Tape& t, const Tensor& g) {
                Tensor& da = t.grad_buffer(ia);
                const double s = g.data[0] * inv;
                for (double& v : da.data) v += s;
              },
              "mean_all");
}

Var Tape::sum_all(Var a) {
  const int ia = check(a, "sum_all");
  const Tensor& va = nodes_[ia].value;
  double total = 0.0;
  for (double v : va.data) total += v;
  return emit(Tensor::scalar(total), nodes_[ia].requires_grad,
              [ia](Tape& t, const Tensor& g) {
                Tensor& da = t.grad_buffer(ia);
                const double s = g.data[0];
                for (double& v : da.data) v += s;
              },
              "sum_all");
}

Var Tape::mean_rows(Var a) {
  const int ia = check(a, "mean_rows");
  const Tensor& va = nodes_[ia].value;
  Tensor out(1, va.cols);
  for (int i = 0; i < va.rows; ++i)
    for (int j = 0; j < va.cols; ++j) out(0, j) += va(i, j);
  const double inv = 1.0 / static_cast<double>(va.rows);
  for (double& v : out.data) v *= inv;
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia, inv](Tape& t, const Tensor& g) {
                Tensor& da = t.grad_buffer(ia);
                for (int i = 0; i < da.rows; ++i)
                  for (int j = 0; j < da.cols; ++j) da(i, j) += g(0, j) * inv;
              },
              "mean_rows");
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  std::vector<int> ids;
  int total_rows = 0;
  const int cols = parts.front().cols();
  bool rg = false;
  for (Var p : parts) {
    const int id = check(p, "concat_rows");
    if (nodes_[id].value.cols != cols)
      throw std::invalid_argument("concat_rows: column mismatch " +
                                  nodes_[id].value.shape_str());
    ids.push_back(id);
    total_rows += nodes_[id].value.rows;
    rg = rg || nodes_[id].requires_grad;
  }
  Tensor out(total_rows, cols);
  int r = 0;
  for (int id : ids) {
    const Tensor& v = nodes_[id].value;
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::size_t>(r) * cols);
    r += v.rows;
  }
  return emit(std::move(out), rg,
              [ids](Tape& t, const Tensor& g) {
                int r = 0;
                for (int id : ids) {
                  const int nr = t.nodes_[id].value.rows;
                  if (t.nodes_[id].requires_grad) {
                    Tensor& da = t.grad_buffer(id);
                    for (int i = 0; i < nr; ++i)
                      for (int j = 0; j < g.cols; ++j) da(i, j) += g(r + i, j);
                  }
                  r += nr;
                }
              },
              "concat_rows");
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  std::vector<int> ids;
  int total_cols = 0;
  const int rows = parts.front().rows();
  bool rg = false;
  for (Var p : parts) {
    const int id = check(p, "concat_cols");
    if (nodes_[id].value.rows != rows)
      throw std::invalid_argument("concat_cols: row mismatch " + nodes_[id].value.shape_str());
    ids.push_back(id);
    total_cols += nodes_[id].value.cols;
    rg = rg || nodes_[id].requires_grad;
  }
  Tensor out(rows, total_cols);
  int c = 0;
  for (int id : ids) {
    const Tensor& v = nodes_[id].value;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < v.cols; ++j) out(i, c + j) = v(i, j);
    c += v.cols;
  }
  return emit(std::move(out), rg,
              [ids](Tape& t, const Tensor& g) {
                int c = 0;
                for (int id : ids) {
                  const int nc = t.nodes_[id].value.cols;
                  if (t.nodes_[id].requires_grad) {
                    Tensor& da = t.grad_buffer(id);
                    for (int i = 0; i < g.rows; ++i)
                      for (int j = 0; j < nc; ++j) da(i, j) += g(i, c + j);
                  }
                  c += nc;
                }
              },
              "concat_cols");
}

Var Tape::gather_rows(Var a, std::vector<int> indices) {
  const int ia = check(a, "gather_rows");
  const Tensor& va = nodes_[ia].value;
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (int idx : indices) {
    if (idx < 0 || idx >= va.rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                  " out of range for " + va.shape_str());
  }
  Tensor out(static_cast<int>(indices.size()), va.cols);
  for (std::size_t t = 0; t < indices.size(); ++t)
    for (int j = 0; j < va.cols; ++j) out(static_cast<int>(t), j) = va(indices[t], j);
  return emit(std::move(out), nodes_[ia].requires_grad,
              [ia, indices = std::move(indices)](Tape& t, const Tensor& g) {
                Tensor& da = t.grad_buffer(ia);
                for (std::size_t r = 0; r < indices.size(); ++r)
                  for (int j = 0; j < g.cols; ++j)
                    da(indices[r], j) += g(static_cast<int>(r), j);
              },
              "gather_rows");
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const int ix = check(x, "layer_norm"), ig = check(gain, "layer_norm"),
            ib = check(bias, "layer_norm");
  const Tensor& vx = nodes_[ix].value;
  const Tensor& vg = nodes_[ig].value;
  const Tensor& vb = nodes_[ib].value;
  if (vg.rows != 1 || vg.cols != vx.cols || vb.rows != 1 || vb.cols != vx.cols)
    throw std::invalid_argument("layer_norm: gain/bias must be (1," +
                                std::to_string(vx.cols) + "), got " + vg.shape_str() + " and " +
                                vb.shape_str());

  Tensor xhat(vx.rows, vx.cols);
  Tensor inv_std(vx.rows, 1);
  Tensor out(vx.rows, vx.cols);
  for (int i = 0; i < vx.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < vx.cols; ++j) mean += vx(i, j);
    mean /= vx.cols;
    double var = 0.0;
    for (int j = 0; j < vx.cols; ++j) {
      const double d = vx(i, j) - mean;
      var += d * d;
    }
    var /= vx.cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(i, 0) = inv;
    for (int j = 0; j < vx.cols; ++j) {
      xhat(i, j) = (vx(i, j) - mean) * inv;
      out(i, j) = xhat(i, j) * vg(0, j) + vb(0, j);
    }
  }

  const bool rg =
      nodes_[ix].requires_grad || nodes_[ig].requires_grad || nodes_[ib].requires_grad;
  return emit(std::move(out), rg,
              [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Tape& t, const Tensor& g) {
                const Tensor& vg = t.nodes_[ig].value;
                const int cols = g.cols;
                if (t.nodes_[ix].requires_grad) {
                  Tensor& dx = t.grad_buffer(ix);
                  for (int i = 0; i < g.rows; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < cols; ++j) {
                      const double alpha = g(i, j) * vg(0, j);
                      m1 += alpha;
                      m2 += alpha * xhat(i, j);
                    }
                    m1 /= cols;
                    m2 /= cols;
                    for (int j = 0; j < cols; ++j) {
                      const double alpha = g(i, j) * vg(0, j);
                      dx(i, j) += (alpha - m1 - xhat(i, j) * m2) * inv_std(i, 0);
                    }
                  }
                }
                if (t.nodes_[ig].requires_grad) {
                  Tensor& dg = t.grad_buffer(ig);
                  for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < cols; ++j) dg(0, j) += g(i, j) * xhat(i, j);
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor& db = t.grad_buffer(ib);
                  for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < cols; ++j) db(0, j) += g(i, j);
                }
              },
              "layer_norm");
}

void Tape::backward(Var root) {
  const int ir = check(root, "backward");
  if (backward_done_)
    throw std::runtime_error("Tape::backward: tape already consumed, rebuild the graph");
  const Tensor& rv = nodes_[ir].value;
  if (rv.rows != 1 || rv.cols != 1)
    throw std::invalid_argument("Tape::backward: root must be scalar, got " + rv.shape_str());
  backward_done_ = true;  // a rejected root must not consume the tape

  grad_buffer(ir).data[0] = 1.0;
  for (int id = ir; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.requires_grad) continue;
    if (node.back) node.back(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.bound != nullptr && !node.grad.empty()) {
      assert_finite(node.grad, "Tape::backward parameter gradient");
      for (std::size_t i = 0; i < node.grad.data.size(); ++i)
        node.bound->grad.data[i] += node.grad.data[i];
    }
  }
}

}  // namespace cinet

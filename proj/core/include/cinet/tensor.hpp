#pragma once

#include <string>
#include <vector>

namespace cinet {

// Dense row-major f64 matrix. Rank-2 everywhere; scalars are 1x1 and row
// vectors 1xC. This is the only value type the tape operates on.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return full(1, 1, v); }

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool empty() const { return data.empty(); }
  std::string shape_str() const;
};

// Throws std::runtime_error naming `where` if any entry is NaN or infinite.
void assert_finite(const Tensor& t, const char* where);

// out = a * b (+= when accumulate). Shapes checked, errors name the shapes.
void matmul_nn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
// out = a * b^T
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);
// out = a^T * b
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate = false);

}  // namespace cinet

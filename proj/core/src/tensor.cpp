#include "cinet/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace cinet {

std::string Tensor::shape_str() const {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

void assert_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(where) + ": non-finite value in tensor " +
                               t.shape_str());
  }
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

void prepare(Tensor& out, int r, int c, bool accumulate) {
  if (!accumulate) {
    out.rows = r;
    out.cols = c;
    out.data.assign(static_cast<std::size_t>(r) * c, 0.0);
  } else if (out.rows != r || out.cols != c) {
    throw std::invalid_argument("matmul: accumulate target has wrong shape " + out.shape_str());
  }
}

}  // namespace

void matmul_nn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols != b.rows) shape_error("matmul_nn", a, b);
  prepare(out, a.rows, b.cols, accumulate);
  const int m = a.rows, kk = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    double* dst = &out.data[static_cast<std::size_t>(i) * n];
    const double* arow = &a.data[static_cast<std::size_t>(i) * kk];
    for (int l = 0; l < kk; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(l) * n];
      for (int j = 0; j < n; ++j) dst[j] += av * brow[j];
    }
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.cols != b.cols) shape_error("matmul_nt", a, b);
  prepare(out, a.rows, b.rows, accumulate);
  const int m = a.rows, kk = a.cols, n = b.rows;
  for (int i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * kk];
    double* dst = &out.data[static_cast<std::size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const double* brow = &b.data[static_cast<std::size_t>(j) * kk];
      double acc = 0.0;
      for (int l = 0; l < kk; ++l) acc += arow[l] * brow[l];
      dst[j] += acc;
    }
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out, bool accumulate) {
  if (a.rows != b.rows) shape_error("matmul_tn", a, b);
  prepare(out, a.cols, b.cols, accumulate);
  const int m = a.cols, kk = a.rows, n = b.cols;
  for (int l = 0; l < kk; ++l) {
    const double* arow = &a.data[static_cast<std::size_t>(l) * m];
    const double* brow = &b.data[static_cast<std::size_t>(l) * n];
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* dst = &out.data[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) dst[j] += av * brow[j];
    }
  }
}

}  // namespace cinet

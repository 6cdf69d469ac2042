#pragma once

#include <cblas.h>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mvps/common.hpp"

namespace mvps::ad {

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor of doubles. Rank 0 is a scalar (size 1).
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_size(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (int64_t(data.size()) != shape_size(shape))
      throw StructuralError("Tensor: data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  int64_t size() const { return int64_t(data.size()); }
  int64_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int64_t cols() const { return shape.size() == 2 ? shape[1] : size(); }
  bool is_scalar() const { return size() == 1; }
  double scalar_value() const {
    if (!is_scalar()) throw ContractError("Tensor: scalar_value on non-scalar " + shape_str(shape));
    return data[0];
  }
  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// C = A * B for row-major 2D tensors, optionally transposing either factor.
// Backed by BLAS dgemm; this is the only external numeric kernel in the
// library, everything else is written out explicitly.
inline void matmul_into(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& c) {
  int64_t am = ta ? a.shape[1] : a.shape[0];
  int64_t ak = ta ? a.shape[0] : a.shape[1];
  int64_t bk = tb ? b.shape[1] : b.shape[0];
  int64_t bn = tb ? b.shape[0] : b.shape[1];
  if (ak != bk)
    throw StructuralError("matmul: inner dimensions disagree, " + shape_str(a.shape) +
                          (ta ? "^T" : "") + " x " + shape_str(b.shape) + (tb ? "^T" : ""));
  c.shape = {am, bn};
  c.data.assign(size_t(am * bn), 0.0);
  if (am == 0 || bn == 0 || ak == 0) return;
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              int(am), int(bn), int(ak), 1.0, a.data.data(), int(a.shape[1]), b.data.data(),
              int(b.shape[1]), 0.0, c.data.data(), int(bn));
}

}  // namespace mvps::ad

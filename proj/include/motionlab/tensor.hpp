// tensor.hpp — dense row-major tensor value type.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "motionlab/common.hpp"
#include "motionlab/rng.hpp"

namespace mlab {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= size_t(d);
  return n;
}

template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::optional<std::vector<S>> grad;  // same shape as data when present

  TensorT() = default;
  explicit TensorT(Shape sh, S fill = S(0))
      : shape(std::move(sh)), data(shape_numel(shape), fill) {}
  TensorT(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  size_t numel() const { return data.size(); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  // Rows/cols of the trailing matrix view: rank-1 is (1, N).
  int rows() const { return rank() <= 1 ? 1 : int(numel() / size_t(shape.back())); }
  int cols() const { return rank() == 0 ? 1 : shape.back(); }

  S& at(int i, int j) { return data[size_t(i) * cols() + j]; }
  const S& at(int i, int j) const { return data[size_t(i) * cols() + j]; }

  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), S(0));
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), S(0));
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(double(v))) return false;
    if (grad)
      for (S v : *grad)
        if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }

  static TensorT zeros(Shape sh) { return TensorT(std::move(sh)); }
  static TensorT full(Shape sh, S v) { return TensorT(std::move(sh), v); }
  static TensorT randn(Shape sh, RngStream& rng, double stddev = 1.0) {
    TensorT t(std::move(sh));
    for (auto& v : t.data) v = S(rng.gauss() * stddev);
    return t;
  }
  static TensorT uniform(Shape sh, RngStream& rng, double lo, double hi) {
    TensorT t(std::move(sh));
    for (auto& v : t.data) v = S(rng.uniform(lo, hi));
    return t;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
void check_finite(const TensorT<S>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace mlab

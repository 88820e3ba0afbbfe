#ifndef SLIMFORMER_TENSOR_HPP
#define SLIMFORMER_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slimformer/common.hpp"
#include "slimformer/rng.hpp"
#include "slimformer/shape.hpp"

namespace slimformer {

// Dense tensor over float or double. `grad`, when non-empty, runs parallel to
// `data`. Trainable parameters are Tensors with requires_grad set; the graph
// accumulates their total derivative into `grad` during backward.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    SF_CHECK_SHAPE(static_cast<int64_t>(data.size()) == numel(shape),
                   "data length ", data.size(), " does not match shape ", shape_str(shape));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool is_scalar() const { return size() == 1; }

  T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), T(0));
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    for (T& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(Shape s, std::initializer_list<T> vals) {
    return Tensor(std::move(s), std::vector<T>(vals));
  }

  static Tensor randn(Shape s, const RngKey& key, double scale = 1.0) {
    Tensor t(std::move(s));
    for (size_t i = 0; i < t.data.size(); ++i) {
      t.data[i] = static_cast<T>(scale * key.normal(i));
    }
    return t;
  }

  static Tensor rand_uniform(Shape s, const RngKey& key, double lo, double hi) {
    Tensor t(std::move(s));
    for (size_t i = 0; i < t.data.size(); ++i) {
      t.data[i] = static_cast<T>(lo + (hi - lo) * key.uniform_open(i));
    }
    return t;
  }
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  SF_CHECK_SHAPE(a.shape == b.shape, "max_abs_diff shape mismatch ", shape_str(a.shape), " vs ",
                 shape_str(b.shape));
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
  }
  return m;
}

}  // namespace slimformer

#endif  // SLIMFORMER_TENSOR_HPP

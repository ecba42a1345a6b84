// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gencil/hash.hpp"
#include "gencil/rng.hpp"

namespace gencil {

using Shape = std::vector<std::size_t>;

/// Raised for shape mismatches and non-finite values inside the numerics layer.
class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles. Tensors of rank > 2 are viewed as
/// rows = shape[0], cols = product of the remaining dims.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape();
    values_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    validate_shape();
    if (values_.size() != shape_size(shape_))
      throw NumericsError("tensor: " + std::to_string(values_.size()) +
                          " values for shape " + shape_string(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  /// Entries drawn from N(0, stddev^2).
  static Tensor randn(Shape shape, double stddev, CounterRng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values_) v = stddev * rng.normal();
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.empty() ? 0 : values_.size() / shape_[0]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  double item() const {
    if (values_.size() != 1)
      throw NumericsError("tensor: item() on shape " + shape_string(shape_));
    return values_[0];
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  std::uint64_t checksum() const { return fnv1a64_doubles(values_); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw NumericsError("tensor: empty shape");
    for (auto d : shape_)
      if (d == 0) throw NumericsError("tensor: zero dimension in " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> values_;
};

/// A named learnable tensor that outlives any single graph.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

inline std::uint64_t checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = kFnvOffset;
  for (const Parameter* p : params) {
    h = fnv1a64(p->name, h);
    h = fnv1a64_doubles(p->value.values(), h);
  }
  return h;
}

}  // namespace gencil

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cometa/error.hpp"

namespace cometa {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

/// Dense row-major matrix of doubles. Vectors are 1 x n rows, scalars 1 x 1.
/// A default-constructed tensor is empty and stands for "no value".
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {
    check_dims();
  }

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : shape_{rows, cols}, values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_.size()) {
      throw ShapeError("tensor of shape " + shape_.str() + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  explicit Tensor(Shape shape, double fill = 0.0) : Tensor(shape.rows, shape.cols, fill) {}

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(1, values.size(), std::vector<double>(values));
  }
  static Tensor row(std::span<const double> values) {
    return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }
  static Tensor column(std::span<const double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  Shape shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  std::span<double> row_span(std::size_t r) {
    return std::span<double>(values_).subspan(r * shape_.cols, shape_.cols);
  }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * shape_.cols, shape_.cols);
  }

  /// Copy of row r as a 1 x cols tensor.
  Tensor row_at(std::size_t r) const {
    if (r >= shape_.rows) {
      throw IndexError("row " + std::to_string(r) + " out of range for " + shape_.str());
    }
    return row(row_span(r));
  }

  void set_row(std::size_t r, std::span<const double> v) {
    if (r >= shape_.rows || v.size() != shape_.cols) {
      throw ShapeError("set_row " + std::to_string(r) + " with " + std::to_string(v.size()) +
                       " values on " + shape_.str());
    }
    std::memcpy(values_.data() + r * shape_.cols, v.data(), v.size() * sizeof(double));
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Value equality; use bitwise_equal when -0.0 / NaN payloads matter.
  bool operator==(const Tensor&) const = default;

 private:
  void check_dims() const {
    if (shape_.rows == 0 || shape_.cols == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + shape_.str());
    }
  }

  Shape shape_;
  std::vector<double> values_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

/// FNV-1a over raw bytes; used for freeze-contract and reproducibility checks.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(const Tensor& t) {
    const std::uint64_t dims[2] = {t.rows(), t.cols()};
    update(dims, sizeof(dims));
    update(t.data(), t.size() * sizeof(double));
  }
  template <typename T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace cometa

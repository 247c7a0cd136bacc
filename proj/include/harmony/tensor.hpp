#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "harmony/errors.hpp"

namespace harmony {

using Real = double;

/// (batch, channels, height, width); every component is at least 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Throws DimensionError naming the first non-positive axis.
void validate_shape(const Shape& s);

/// Dense row-major NCHW buffer of Real.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(const Shape& shape, Real fill = 0);
  Tensor(const Shape& shape, std::vector<Real> values);

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor full(const Shape& shape, Real v) { return Tensor(shape, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  Real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const Real* plane(int n, int c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(Real v);
  /// this += other (same shape).
  void add_inplace(const Tensor& other);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace harmony

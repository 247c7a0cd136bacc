#include "harmony/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace harmony {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

void validate_shape(const Shape& s) {
  const char* names[] = {"batch", "channels", "height", "width"};
  const int dims[] = {s.n, s.c, s.h, s.w};
  for (int i = 0; i < 4; ++i) {
    if (dims[i] < 1) {
      throw DimensionError(names[i], std::string("shape ") + s.str() +
                                         ": axis '" + names[i] +
                                         "' must be >= 1");
    }
  }
}

Tensor::Tensor(const Shape& shape, Real fill) : shape_(shape) {
  validate_shape(shape);
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(const Shape& shape, std::vector<Real> values)
    : shape_(shape), data_(std::move(values)) {
  validate_shape(shape);
  if (data_.size() != shape.numel()) {
    throw DimensionError("size", "buffer of " + std::to_string(data_.size()) +
                                     " values does not match shape " +
                                     shape.str());
  }
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_inplace(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw DimensionError("shape", "add_inplace: " + shape_.str() + " vs " +
                                      other.shape_.str());
  }
  const std::size_t n = data_.size();
  Real* dst = data_.data();
  const Real* src = other.data_.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape",
                         "max_abs_diff: " + a.shape().str() + " vs " +
                             b.shape().str());
  }
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace harmony

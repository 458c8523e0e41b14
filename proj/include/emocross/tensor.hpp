#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emocross/errors.hpp"

namespace emocross {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor of 64-bit reals; the value type for samples,
// activations, parameters and gradients.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  static Tensor vector(std::vector<double> v) {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool defined() const { return !shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data_.size()) {
      throw DimensionError("reshape: cannot view " + shape_str(shape_) + " as " +
                           shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  double sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
  }

  double abs_max() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return s;
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) {
        throw DimensionError("tensor: zero-sized axis in shape " + shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

/// a += scale * b, elementwise.
inline void add_scaled(Tensor& a, const Tensor& b, double scale) {
  check_same_shape(a, b, "add_scaled");
  double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += scale * pb[i];
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Copies row r of a [N,D] matrix into a [D] tensor.
inline Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t d = m.dim(1);
  Tensor out(Shape{d});
  const double* src = m.data() + r * d;
  for (std::size_t i = 0; i < d; ++i) out[i] = src[i];
  return out;
}

inline void add_to_row(Tensor& m, std::size_t r, const Tensor& v, double scale) {
  const std::size_t d = m.dim(1);
  double* dst = m.data() + r * d;
  for (std::size_t i = 0; i < d; ++i) dst[i] += scale * v[i];
}

}  // namespace emocross

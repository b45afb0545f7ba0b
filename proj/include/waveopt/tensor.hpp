#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <vector>

#include "waveopt/common.hpp"

namespace waveopt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

// Dense row-major n-d array. Reductions accumulate in double regardless of
// the element type; shapes never broadcast implicitly.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    check_shape(data_.size() == shape_numel(shape_),
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_str(shape_));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // 2-d and 3-d accessors for the image/latent-heavy code paths.
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  T at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    check_shape(shape_numel(s) == numel(),
                "reshape " + shape_str(shape_) + " -> " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }
  friend Tensor operator*(T s, Tensor a) { return a *= s; }

  double sum() const {
    double acc = 0.0;
    for (T v : data_) acc += static_cast<double>(v);
    return acc;
  }
  double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }
  double min() const {
    double m = std::numeric_limits<double>::infinity();
    for (T v : data_) m = std::min(m, static_cast<double>(v));
    return m;
  }
  double max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (T v : data_) m = std::max(m, static_cast<double>(v));
    return m;
  }
  double max_abs() const {
    double m = 0.0;
    for (T v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

 private:
  void validate_shape() const {
    for (auto e : shape_)
      check_shape(e > 0, "zero or negative extent in shape " + shape_str(shape_));
  }
  void require_same(const Tensor& o, const char* op) const {
    check_shape(shape_ == o.shape_, std::string("shape mismatch in ") + op + ": " +
                                        shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.same_shape(b), "dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

// Sum of squared entries, 64-bit accumulation.
template <typename T>
double sum_squares(const Tensor<T>& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double v = static_cast<double>(a[i]);
    acc += v * v;
  }
  return acc;
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.same_shape(b), "mse: shape mismatch " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_shape(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i] || std::signbit(a[i]) != std::signbit(b[i])) return false;
  return true;
}

template <typename T>
Tensor<T> concat_flat(const std::vector<const Tensor<T>*>& parts) {
  std::size_t n = 0;
  for (auto* p : parts) n += p->numel();
  std::vector<T> out;
  out.reserve(n);
  for (auto* p : parts) out.insert(out.end(), p->vec().begin(), p->vec().end());
  return Tensor<T>({n}, std::move(out));
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace waveopt

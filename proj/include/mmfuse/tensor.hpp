#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/error.hpp"

namespace mmfuse {

// Extents of an NCHW tensor. All four are at least 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

// Dense NCHW tensor with row-major storage. T is float for the normal path;
// double is used where gradients are checked against finite differences.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{}) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(check(shape)), data_(shape.numel(), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(check(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor buffer holds " + std::to_string(data_.size()) + " elements, shape " +
                       to_string(shape_) + " needs " + std::to_string(shape_.numel()));
    }
  }

  static BasicTensor zeros(Shape s) { return BasicTensor(s, T(0)); }
  static BasicTensor ones(Shape s) { return BasicTensor(s, T(1)); }
  static BasicTensor full(Shape s, T v) { return BasicTensor(s, v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  // Same buffer, new extents; the element count must not change.
  BasicTensor reshaped(Shape s) const {
    if (s.numel() != numel()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    return BasicTensor(s, data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  // Bitwise equality of shape and payload.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Shape check(Shape s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
      throw ShapeError("tensor extents must be >= 1, got " + to_string(s));
    }
    return s;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return v - v == T(0); });
}

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace mmfuse

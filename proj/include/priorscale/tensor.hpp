#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "priorscale/errors.hpp"

namespace priorscale {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

// Dense channels x height x width grid, row-major within each channel plane.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(checked_size(shape), fill) {}
  Tensor(int channels, int height, int width, T fill = T{})
      : Tensor(Shape{channels, height, width}, fill) {}

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::span<T> plane(int c) {
    return std::span<T>(data_).subspan(plane_size() * static_cast<std::size_t>(c), plane_size());
  }
  std::span<const T> plane(int c) const {
    return std::span<const T>(data_).subspan(plane_size() * static_cast<std::size_t>(c),
                                             plane_size());
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_size(const Shape& s) {
    if (s.channels < 0 || s.height < 0 || s.width < 0) {
      throw ArgumentError("negative tensor extent " + to_string(s));
    }
    return s.size();
  }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(shape_.height) * static_cast<std::size_t>(shape_.width);
  }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + static_cast<std::size_t>(y)) *
               shape_.width +
           static_cast<std::size_t>(x);
  }

  Shape shape_;
  std::vector<T> data_;
};

// The 4-channel, 1/8-resolution representation all denoising happens in.
using Latent = Tensor<double>;

// Pixel-space image, channels x height x width, values nominally in [0, 1].
using Image = Tensor<float>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ArgumentError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                        to_string(b));
  }
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i])));
  }
  return m;
}

template <class T>
double sum_squares(const Tensor<T>& a) {
  double s = 0.0;
  for (T v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& from) {
  Tensor<To> out(from.shape());
  auto src = from.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace priorscale

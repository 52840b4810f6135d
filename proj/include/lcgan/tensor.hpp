#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lcgan/error.hpp"

namespace lcgan {

/// NCHW extents of a dense 4-D tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }
};

/// Dense row-major NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  T* sample(int n) { return data_.data() + n * shape_.sample_size(); }
  const T* sample(int n) const { return data_.data() + n * shape_.sample_size(); }
  T* channel(int n, int c) { return sample(n) + c * shape_.plane(); }
  const T* channel(int n, int c) const { return sample(n) + c * shape_.plane(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

/// Concatenates two tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("cannot concatenate " + sa.str() + " with " + sb.str());
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.sample(n), sa.sample_size(), out.sample(n));
    std::copy_n(b.sample(n), sb.sample_size(), out.sample(n) + sa.sample_size());
  }
  return out;
}

/// Selects samples [first, first+count) into a new tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int first, int count) {
  Shape s = t.shape();
  s.n = count;
  Tensor<T> out(s);
  std::copy_n(t.sample(first), s.size(), out.data());
  return out;
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  std::transform(t.vec().begin(), t.vec().end(), out.vec().begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

/// H x W map of class ids.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : h(h), w(w), v(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return v.size(); }
  std::uint8_t& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t operator()(int y, int x) const {
    return v[static_cast<std::size_t>(y) * w + x];
  }
  bool operator==(const LabelMap&) const = default;
};

/// Raw multi-band raster, planar (C, H, W), unsigned 16-bit counts.
struct RawImage {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint16_t> v;

  RawImage() = default;
  RawImage(int c, int h, int w) : c(c), h(h), w(w), v(static_cast<std::size_t>(c) * h * w) {}

  std::uint16_t& at(int ch, int y, int x) {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  std::uint16_t at(int ch, int y, int x) const {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  bool operator==(const RawImage&) const = default;
};

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : h(h), w(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::array<std::uint8_t, 3> pixel(int y, int x) const {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set(int y, int x, std::array<std::uint8_t, 3> p) {
    const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    rgb[i] = p[0];
    rgb[i + 1] = p[1];
    rgb[i + 2] = p[2];
  }
  bool operator==(const RgbImage&) const = default;
};

}  // namespace lcgan

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/gradcore/tensor.hpp"

namespace spuq {

// Voxel spacing in millimetres along (x, y, z).
using Spacing = std::array<double, 3>;

// Dense H x W x D grid stored x-fastest: index = x + W * (y + H * z).
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(std::size_t height, std::size_t width, std::size_t depth, T fill = T{}, Spacing spacing = {1.0, 1.0, 1.0})
      : h_(height), w_(width), d_(depth), spacing_(spacing), data_(height * width * depth, fill) {}

  template <typename U>
  static Grid3 like(const Grid3<U>& other, T fill = T{}) {
    return Grid3(other.height(), other.width(), other.depth(), fill, other.spacing());
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t depth() const { return d_; }
  std::size_t slice_size() const { return h_ * w_; }
  std::size_t size() const { return data_.size(); }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(const Spacing& s) { spacing_ = s; }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + w_ * (y + h_ * z); }
  T& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::span<T> slice(std::size_t z) { return {data_.data() + z * slice_size(), slice_size()}; }
  std::span<const T> slice(std::size_t z) const { return {data_.data() + z * slice_size(), slice_size()}; }

  template <typename U>
  bool same_dims(const Grid3<U>& o) const {
    return h_ == o.height() && w_ == o.width() && d_ == o.depth();
  }

  friend bool operator==(const Grid3& a, const Grid3& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.d_ == b.d_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
  }

 private:
  std::size_t h_ = 0, w_ = 0, d_ = 0;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<T> data_;
};

// Intensities normalized to [0, 1].
using Volume3D = Grid3<float>;
// Hard labels in {0, 1}.
using MaskVolume = Grid3<std::uint8_t>;
// Soft labels or per-voxel statistics.
using SoftVolume = Grid3<float>;

// Row-major H x W image.
struct Image2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), data(h * w, fill) {}

  float& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }

  grad::Tensor tensor() const { return grad::Tensor(grad::Shape{height, width}, data); }
  static Image2D from_tensor(const grad::Tensor& t) {
    Image2D img(t.dim(0), t.dim(1));
    img.data = t.values();
    return img;
  }

  friend bool operator==(const Image2D&, const Image2D&) = default;
};

template <typename T>
Image2D slice_image(const Grid3<T>& g, std::size_t z) {
  Image2D img(g.height(), g.width());
  auto s = g.slice(z);
  for (std::size_t i = 0; i < s.size(); ++i) img.data[i] = static_cast<float>(s[i]);
  return img;
}

inline void set_slice(SoftVolume& g, std::size_t z, const Image2D& img) {
  auto s = g.slice(z);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = img.data[i];
}

inline void set_slice(MaskVolume& g, std::size_t z, const Image2D& img, float threshold = 0.5f) {
  auto s = g.slice(z);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = img.data[i] >= threshold ? 1 : 0;
}

inline MaskVolume threshold(const SoftVolume& soft, float t = 0.5f) {
  MaskVolume m = MaskVolume::like(soft);
  for (std::size_t i = 0; i < soft.size(); ++i) m[i] = soft[i] >= t ? 1 : 0;
  return m;
}

inline Image2D threshold(const Image2D& soft, float t = 0.5f) {
  Image2D out(soft.height, soft.width);
  for (std::size_t i = 0; i < soft.size(); ++i) out.data[i] = soft.data[i] >= t ? 1.0f : 0.0f;
  return out;
}

inline std::size_t count_foreground(std::span<const std::uint8_t> labels) {
  std::size_t n = 0;
  for (auto v : labels) n += v != 0;
  return n;
}

// Volume3D contract: voxels in [0, 1], depth at least 3.
inline void validate_volume(const Volume3D& v) {
  if (v.depth() < 3) throw std::invalid_argument("volume depth must be >= 3, got " + std::to_string(v.depth()));
  for (float x : v.values()) {
    if (!(x >= 0.0f && x <= 1.0f)) throw std::invalid_argument("volume voxels must lie in [0, 1]");
  }
}

}  // namespace spuq

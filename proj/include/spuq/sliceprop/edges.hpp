#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "spuq/gradcore/tensor.hpp"
#include "spuq/volume.hpp"

namespace spuq::prop {

struct SobelPair {
  std::vector<double> gx, gy;
};

// 3x3 Sobel derivatives with replicated borders.
inline SobelPair sobel(const Image2D& img) {
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  SobelPair s{std::vector<double>(img.size()), std::vector<double>(img.size())};
  auto at = [&](long x, long y) {
    x = std::clamp(x, 0L, w - 1);
    y = std::clamp(y, 0L, h - 1);
    return static_cast<double>(img.data[y * w + x]);
  };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      s.gx[y * w + x] = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      s.gy[y * w + x] = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
    }
  return s;
}

inline void max_normalize(float* v, std::size_t n) {
  float mx = 0.0f;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (mx <= 0.0f) return;
  for (std::size_t i = 0; i < n; ++i) v[i] /= mx;
}

// Directional edge responses |cos(t) gx + sin(t) gy| for n evenly spaced
// orientations t = k pi / n, each max-normalized. Output [n, H, W].
inline grad::Tensor edge_profile(const Image2D& img, std::size_t n_channels) {
  if (n_channels < 2) throw std::invalid_argument("edge_profile: n_channels must be >= 2");
  const auto s = sobel(img);
  const std::size_t hw = img.size();
  grad::Tensor out(grad::Shape{n_channels, img.height, img.width});
  for (std::size_t k = 0; k < n_channels; ++k) {
    const double t = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_channels);
    const double c = std::cos(t), sn = std::sin(t);
    float* ch = out.data() + k * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double r = std::abs(c * s.gx[i] + sn * s.gy[i]);
      ch[i] = r < 1e-12 ? 0.0f : static_cast<float>(r);
    }
    max_normalize(ch, hw);
  }
  return out;
}

// Sobel gradient magnitude normalized to max 1; all zero for a constant image.
inline grad::Tensor edge_weight_map(const Image2D& img) {
  const auto s = sobel(img);
  grad::Tensor out(grad::Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double m = std::hypot(s.gx[i], s.gy[i]);
    out[i] = m < 1e-12 ? 0.0f : static_cast<float>(m);
  }
  max_normalize(out.data(), out.size());
  return out;
}

}  // namespace spuq::prop

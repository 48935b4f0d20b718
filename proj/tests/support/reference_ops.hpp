#pragma once

// Double-precision forward-only reimplementations of the differentiable
// primitives. Used as the function under central finite differences, so the
// difference quotients are not swamped by float32 rounding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "spuq/gradcore/rng.hpp"

namespace spuq::testing::ref {

using Vec = std::vector<double>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += a[i * k + p] * b[p * n + j];
  return out;
}

inline Vec softmax_rows(const Vec& x, std::size_t rows, std::size_t cols) {
  Vec out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(x[r * cols + c] - mx) / s;
  }
  return out;
}

// x: [cin, d, h, w]; w: [cout, cin, kd, kh, kw]; zero "same" padding.
inline Vec conv3d(const Vec& x, const Vec& w, const Vec& b, std::size_t cin, std::size_t d, std::size_t h,
                  std::size_t wd, std::size_t cout, std::size_t kd, std::size_t kh, std::size_t kw) {
  Vec out(cout * d * h * wd, 0.0);
  const long pd = static_cast<long>(kd / 2), ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (std::size_t co = 0; co < cout; ++co)
    for (long z = 0; z < static_cast<long>(d); ++z)
      for (long y = 0; y < static_cast<long>(h); ++y)
        for (long xx = 0; xx < static_cast<long>(wd); ++xx) {
          double s = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (long a = 0; a < static_cast<long>(kd); ++a)
              for (long bb = 0; bb < static_cast<long>(kh); ++bb)
                for (long c = 0; c < static_cast<long>(kw); ++c) {
                  const long sz = z + a - pd, sy = y + bb - ph, sx = xx + c - pw;
                  if (sz < 0 || sy < 0 || sx < 0 || sz >= static_cast<long>(d) || sy >= static_cast<long>(h) ||
                      sx >= static_cast<long>(wd))
                    continue;
                  s += w[(((co * cin + ci) * kd + a) * kh + bb) * kw + c] * x[((ci * d + sz) * h + sy) * wd + sx];
                }
          out[((co * d + z) * h + y) * wd + xx] = s;
        }
  return out;
}

inline double ssim(const Vec& x, const Vec& y, std::size_t h, std::size_t w, std::size_t win, double c1, double c2) {
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t wy = 0; wy + win <= h; ++wy)
    for (std::size_t wx = 0; wx + win <= w; ++wx) {
      double mx = 0, my = 0;
      for (std::size_t r = 0; r < win; ++r)
        for (std::size_t c = 0; c < win; ++c) {
          mx += x[(wy + r) * w + wx + c];
          my += y[(wy + r) * w + wx + c];
        }
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t r = 0; r < win; ++r)
        for (std::size_t c = 0; c < win; ++c) {
          const double a = x[(wy + r) * w + wx + c] - mx, b = y[(wy + r) * w + wx + c] - my;
          vx += a * a;
          vy += b * b;
          cxy += a * b;
        }
      vx /= n;
      vy /= n;
      cxy /= n;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

inline Vec grid_sample_2d(const Vec& img, const Vec& flow, std::size_t h, std::size_t w) {
  Vec out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double sx = std::clamp(x + flow[p], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(y + flow[h * w + p], 0.0, static_cast<double>(h - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - x0, ay = sy - y0;
      out[p] = (1 - ay) * ((1 - ax) * img[y0 * w + x0] + ax * img[y0 * w + x1]) +
               ay * ((1 - ax) * img[y1 * w + x0] + ax * img[y1 * w + x1]);
    }
  return out;
}

inline Vec window_logits(const Vec& fs, const Vec& ft, std::size_t ch, std::size_t h, std::size_t w, std::size_t r,
                         double scale) {
  const std::size_t side = 2 * r + 1, k = side * side, hw = h * w;
  Vec out(hw * k, -1.0e9);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      for (long dy = -static_cast<long>(r); dy <= static_cast<long>(r); ++dy)
        for (long dx = -static_cast<long>(r); dx <= static_cast<long>(r); ++dx) {
          const long qy = y + dy, qx = x + dx;
          if (qy < 0 || qx < 0 || qy >= static_cast<long>(h) || qx >= static_cast<long>(w)) continue;
          double dot = 0.0;
          for (std::size_t c = 0; c < ch; ++c) dot += ft[c * hw + y * w + x] * fs[c * hw + qy * w + qx];
          out[(y * w + x) * k + (dy + r) * side + (dx + r)] = scale * dot;
        }
  return out;
}

inline Vec warp_window(const Vec& a, const Vec& src, std::size_t h, std::size_t w, std::size_t r) {
  const std::size_t side = 2 * r + 1, k = side * side;
  Vec out(h * w, 0.0);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      for (long dy = -static_cast<long>(r); dy <= static_cast<long>(r); ++dy)
        for (long dx = -static_cast<long>(r); dx <= static_cast<long>(r); ++dx) {
          const long qy = y + dy, qx = x + dx;
          if (qy < 0 || qx < 0 || qy >= static_cast<long>(h) || qx >= static_cast<long>(w)) continue;
          out[y * w + x] += a[(y * w + x) * k + (dy + r) * side + (dx + r)] * src[qy * w + qx];
        }
  return out;
}

// Draws the per-channel relaxed drop indicators exactly as the library does.
inline Vec concrete_noise(grad::Rng rng, std::size_t channels) {
  Vec u(channels);
  for (double& v : u) v = std::clamp(rng.uniform_open(), 1e-7, 1.0 - 1e-7);
  return u;
}

inline Vec concrete_gate(const Vec& x, double logit, const Vec& u, double t, std::size_t channels) {
  const std::size_t n = x.size() / channels;
  const double p = sigmoid(logit);
  Vec out(x.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const double z = sigmoid((logit + std::log(u[c]) - std::log(1 - u[c])) / t);
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = x[c * n + i] * (1 - z) / (1 - p);
  }
  return out;
}

}  // namespace spuq::testing::ref

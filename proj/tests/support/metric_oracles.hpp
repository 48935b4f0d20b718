#pragma once

// Exhaustive reference implementations of the segmentation metrics, written
// from the definitions with no shared code paths beyond the grid type.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "spuq/gradcore/rng.hpp"
#include "spuq/volume.hpp"

namespace spuq::testing::oracle {

struct P {
  long x, y, z;
};

inline std::vector<P> surface(const MaskVolume& m) {
  const long W = static_cast<long>(m.width()), H = static_cast<long>(m.height()), D = static_cast<long>(m.depth());
  std::vector<P> out;
  const long off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (long z = 0; z < D; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        if (!m.at(x, y, z)) continue;
        bool edge = false;
        for (const auto& o : off) {
          const long extent = o[0] ? W : (o[1] ? H : D);
          if (extent == 1) continue;
          const long nx = x + o[0], ny = y + o[1], nz = z + o[2];
          const bool outside = nx < 0 || ny < 0 || nz < 0 || nx >= W || ny >= H || nz >= D;
          if (outside || !m.at(nx, ny, nz)) edge = true;
        }
        if (edge) out.push_back({x, y, z});
      }
  return out;
}

inline std::vector<double> min_dists(const std::vector<P>& a, const std::vector<P>& b, const Spacing& s) {
  std::vector<double> out;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double d = std::sqrt(std::pow((p.x - q.x) * s[0], 2) + std::pow((p.y - q.y) * s[1], 2) +
                                 std::pow((p.z - q.z) * s[2], 2));
      best = std::min(best, d);
    }
    out.push_back(best);
  }
  return out;
}

inline double dsc(const MaskVolume& a, const MaskVolume& b) {
  double inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] * b[i];
  }
  return na + nb == 0 ? 100.0 : 200.0 * inter / (na + nb);
}

inline double surface_dice(const MaskVolume& a, const MaskVolume& b, const Spacing& s, double tau) {
  const auto sa = surface(a), sb = surface(b);
  if (sa.empty() && sb.empty()) return 100.0;
  if (sa.empty() || sb.empty()) return 0.0;
  auto frac = [tau](const std::vector<double>& d) {
    double n = 0;
    for (double v : d) n += v <= tau + 1e-12;
    return n / static_cast<double>(d.size());
  };
  return 50.0 * (frac(min_dists(sa, sb, s)) + frac(min_dists(sb, sa, s)));
}

inline double ahd(const MaskVolume& a, const MaskVolume& b, const Spacing& s) {
  const auto sa = surface(a), sb = surface(b);
  auto mean = [](const std::vector<double>& v) {
    double t = 0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  return 0.5 * (mean(min_dists(sa, sb, s)) + mean(min_dists(sb, sa, s)));
}

// Random mask of random dims up to 8^3 built from a few boxes plus speckle.
inline MaskVolume random_mask(grad::Rng& rng, std::size_t h, std::size_t w, std::size_t d) {
  MaskVolume m(h, w, d);
  const int boxes = 1 + static_cast<int>(rng.index(3));
  for (int b = 0; b < boxes; ++b) {
    const std::size_t x0 = rng.index(w), y0 = rng.index(h), z0 = rng.index(d);
    const std::size_t x1 = x0 + rng.index(w - x0), y1 = y0 + rng.index(h - y0), z1 = z0 + rng.index(d - z0);
    for (std::size_t z = z0; z <= z1; ++z)
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) m.at(x, y, z) = 1;
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (rng.uniform() < 0.08) m[i] = 1 - m[i];
  }
  return m;
}

}  // namespace spuq::testing::oracle

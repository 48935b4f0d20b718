#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/volume.hpp"

namespace spuq::metrics {

struct Voxel {
  std::int32_t x, y, z;
  friend bool operator==(const Voxel&, const Voxel&) = default;
};

inline void require_same_shape(const MaskVolume& a, const MaskVolume& b, const char* op) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + "x" + std::to_string(a.depth()) + " vs " +
                                std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                                std::to_string(b.depth()));
  }
}

// Foreground voxels with at least one 6-connected background neighbour.
// Positions outside the grid count as background, except along an axis of
// extent 1, which is treated as absent (a single slice is a 2D image).
inline std::vector<Voxel> boundary_voxels(const MaskVolume& m) {
  std::vector<Voxel> out;
  const long W = static_cast<long>(m.width()), H = static_cast<long>(m.height()), D = static_cast<long>(m.depth());
  auto bg = [&](long x, long y, long z) {
    if (x < 0 || y < 0 || z < 0 || x >= W || y >= H || z >= D) return true;
    return m.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) == 0;
  };
  for (long z = 0; z < D; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        if (bg(x, y, z)) continue;
        const bool edge = (W > 1 && (bg(x - 1, y, z) || bg(x + 1, y, z))) ||
                          (H > 1 && (bg(x, y - 1, z) || bg(x, y + 1, z))) ||
                          (D > 1 && (bg(x, y, z - 1) || bg(x, y, z + 1)));
        if (edge) out.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), static_cast<std::int32_t>(z)});
      }
  return out;
}

enum class DistanceMethod { Auto, BruteForce, Transform };

// Grids with fewer voxels than this use exhaustive pair distances.
inline constexpr std::size_t kBruteForceVoxelLimit = 32 * 32 * 32;

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1D squared distance transform (lower envelope of parabolas) with
// sample pitch `step`, in place. Infinite samples carry no parabola.
inline void edt_1d(std::vector<double>& f, double step) {
  const std::size_t n = f.size();
  std::vector<double> pos, val, brk;  // vertex positions, vertex heights, left breakpoints
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double pq = static_cast<double>(q) * step;
    double s = -kInf;
    while (!pos.empty()) {
      s = ((f[q] + pq * pq) - (val.back() + pos.back() * pos.back())) / (2.0 * (pq - pos.back()));
      if (s > brk.back()) break;
      pos.pop_back();
      val.pop_back();
      brk.pop_back();
      s = -kInf;
    }
    pos.push_back(pq);
    val.push_back(f[q]);
    brk.push_back(s);
  }
  if (pos.empty()) return;
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double pq = static_cast<double>(q) * step;
    while (k + 1 < pos.size() && brk[k + 1] < pq) ++k;
    f[q] = (pq - pos[k]) * (pq - pos[k]) + val[k];
  }
}

// Squared physical distance from every voxel to the nearest listed voxel.
inline std::vector<double> squared_distance_field(std::size_t h, std::size_t w, std::size_t d,
                                                  const std::vector<Voxel>& sites, const Spacing& sp) {
  std::vector<double> field(h * w * d, kInf);
  for (const auto& s : sites) field[s.x + w * (s.y + h * s.z)] = 0.0;
  std::vector<double> line;
  const std::array<std::size_t, 3> extent{w, h, d};
  const std::array<std::size_t, 3> stride{1, w, w * h};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = extent[axis];
    if (n < 2) continue;
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::size_t i = 0; i < extent[a1]; ++i)
      for (std::size_t j = 0; j < extent[a2]; ++j) {
        const std::size_t base = i * stride[a1] + j * stride[a2];
        line.resize(n);
        for (std::size_t k = 0; k < n; ++k) line[k] = field[base + k * stride[axis]];
        edt_1d(line, sp[axis]);
        for (std::size_t k = 0; k < n; ++k) field[base + k * stride[axis]] = line[k];
      }
  }
  return field;
}

inline double squared_distance(const Voxel& a, const Voxel& b, const Spacing& sp) {
  const double dx = (a.x - b.x) * sp[0], dy = (a.y - b.y) * sp[1], dz = (a.z - b.z) * sp[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// For each voxel in `from`, the physical distance to the nearest voxel in `to`.
inline std::vector<double> nearest_distances(const std::vector<Voxel>& from, const std::vector<Voxel>& to,
                                             std::size_t h, std::size_t w, std::size_t d, const Spacing& sp,
                                             DistanceMethod method = DistanceMethod::Auto) {
  std::vector<double> out(from.size(), detail::kInf);
  if (to.empty() || from.empty()) return out;
  if (method == DistanceMethod::Auto) {
    method = h * w * d < kBruteForceVoxelLimit ? DistanceMethod::BruteForce : DistanceMethod::Transform;
  }
  if (method == DistanceMethod::BruteForce) {
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = detail::kInf;
      for (const auto& b : to) best = std::min(best, detail::squared_distance(from[i], b, sp));
      out[i] = std::sqrt(best);
    }
  } else {
    const auto field = detail::squared_distance_field(h, w, d, to, sp);
    for (std::size_t i = 0; i < from.size(); ++i) out[i] = std::sqrt(field[from[i].x + w * (from[i].y + h * from[i].z)]);
  }
  return out;
}

struct SurfaceDistances {
  std::vector<double> pred_to_gt;
  std::vector<double> gt_to_pred;
};

inline SurfaceDistances surface_distances(const MaskVolume& pred, const MaskVolume& gt, const Spacing& sp,
                                          DistanceMethod method = DistanceMethod::Auto) {
  require_same_shape(pred, gt, "surface_distances");
  const auto bp = boundary_voxels(pred), bg = boundary_voxels(gt);
  const std::size_t h = gt.height(), w = gt.width(), d = gt.depth();
  return {nearest_distances(bp, bg, h, w, d, sp, method), nearest_distances(bg, bp, h, w, d, sp, method)};
}

}  // namespace spuq::metrics

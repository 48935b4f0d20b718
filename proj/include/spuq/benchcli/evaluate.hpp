#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spuq/phantomgen.hpp"
#include "spuq/segmetrics.hpp"
#include "spuq/uqwrap.hpp"

namespace spuq::bench {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Capped-cylinder diagnostics.
struct CapReport {
  std::size_t cap_depth = 0;
  std::size_t over_extension_voxels = 0;  // predicted foreground strictly beyond the cap
  double beyond_cap_uncertainty = kNaN;   // mean variance over the faded tube past the cap
  double trunk_uncertainty = kNaN;        // mean variance over labelled voxels off the annotated slice
};

// Branching-phantom diagnostics.
struct BranchReport {
  std::size_t split_depth = 0;
  double trunk_dsc = kNaN, branch_a_dsc = kNaN, branch_b_dsc = kNaN;
  double dsc_before_split = kNaN;  // slice split_depth - 1
  double dsc_at_split = kNaN;
};

struct VolumeResult {
  std::string id;
  phantom::Kind kind = phantom::Kind::Ellipsoid;
  std::size_t annotated_slice = 0;
  double dsc = 0.0;
  double surface_dice = 0.0;
  double ahd = kNaN;          // undefined when a mask is empty
  double uncertainty = kNaN;  // per-volume score; NaN without UQ
  std::vector<metrics::SliceRecord> slices;
  double spacing_z = 1.0;
  std::optional<CapReport> cap;
  std::optional<BranchReport> branch;
};

namespace detail {

inline double mean_or_nan(double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : kNaN; }

// DSC restricted to the voxels selected by `keep`.
template <typename Pred>
double region_dsc(const MaskVolume& pred, const MaskVolume& gt, Pred keep) {
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t z = 0; z < gt.depth(); ++z)
    for (std::size_t y = 0; y < gt.height(); ++y)
      for (std::size_t x = 0; x < gt.width(); ++x) {
        if (!keep(x, y, z)) continue;
        const bool a = pred.at(x, y, z) != 0, b = gt.at(x, y, z) != 0;
        p += a;
        g += b;
        both += a && b;
      }
  return p + g == 0 ? 100.0 : 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

}  // namespace detail

inline CapReport cap_report(const phantom::PhantomSpec& s, const MaskVolume& pred, const MaskVolume& gt,
                            const SoftVolume* variance, std::size_t annotated) {
  CapReport r;
  r.cap_depth = s.cap_depth;
  for (std::size_t z = s.cap_depth + 1; z < pred.depth(); ++z)
    for (auto v : pred.slice(z)) r.over_extension_voxels += v != 0;
  if (!variance) return r;
  double beyond = 0.0, trunk = 0.0;
  std::size_t nb = 0, nt = 0;
  for (std::size_t z = 0; z < gt.depth(); ++z)
    for (std::size_t y = 0; y < gt.height(); ++y)
      for (std::size_t x = 0; x < gt.width(); ++x) {
        const double var = variance->at(x, y, z);
        if (gt.at(x, y, z) && z != annotated) {
          trunk += var;
          ++nt;
        } else if (z > s.cap_depth && z <= s.z_end) {
          const auto c = phantom::axis_center(s, static_cast<double>(z));
          const double dx = static_cast<double>(x) - c[0], dy = static_cast<double>(y) - c[1];
          if (dx * dx + dy * dy <= s.radius_x * s.radius_x) {
            beyond += var;
            ++nb;
          }
        }
      }
  r.beyond_cap_uncertainty = detail::mean_or_nan(beyond, nb);
  r.trunk_uncertainty = detail::mean_or_nan(trunk, nt);
  return r;
}

// Components: the trunk below the split and the two half-spaces either side
// of the trunk axis from the split on.
inline BranchReport branch_report(const phantom::PhantomSpec& s, const MaskVolume& pred, const MaskVolume& gt,
                                  const std::vector<metrics::SliceRecord>& slices) {
  BranchReport r;
  r.split_depth = s.split_depth;
  const double ux = std::cos(s.branch_angle), uy = std::sin(s.branch_angle);
  auto side = [&](std::size_t x, std::size_t y, std::size_t z) {
    const auto c = phantom::axis_center(s, static_cast<double>(z));
    return (static_cast<double>(x) - c[0]) * ux + (static_cast<double>(y) - c[1]) * uy;
  };
  r.trunk_dsc = detail::region_dsc(pred, gt, [&](std::size_t, std::size_t, std::size_t z) { return z < s.split_depth; });
  r.branch_a_dsc = detail::region_dsc(
      pred, gt, [&](std::size_t x, std::size_t y, std::size_t z) { return z >= s.split_depth && side(x, y, z) >= 0.0; });
  r.branch_b_dsc = detail::region_dsc(
      pred, gt, [&](std::size_t x, std::size_t y, std::size_t z) { return z >= s.split_depth && side(x, y, z) < 0.0; });
  if (s.split_depth >= 1 && s.split_depth < slices.size()) {
    r.dsc_before_split = slices[s.split_depth - 1].dsc;
    r.dsc_at_split = slices[s.split_depth].dsc;
  }
  return r;
}

// Metrics of one prediction against its ground truth.
inline VolumeResult evaluate_prediction(const std::string& id, const phantom::PhantomSpec& spec,
                                        const uq::UqPrediction& p, const MaskVolume& gt) {
  VolumeResult r;
  r.id = id;
  r.kind = spec.kind;
  r.annotated_slice = p.record.annotated_slice;
  r.spacing_z = gt.spacing()[2];
  r.dsc = metrics::dsc(p.mask, gt);
  r.surface_dice = metrics::surface_dice(p.mask, gt, gt.spacing());
  try {
    r.ahd = metrics::average_hausdorff(p.mask, gt, gt.spacing()).ahd;
  } catch (const std::invalid_argument&) {
    r.ahd = kNaN;
  }
  std::vector<double> per_slice;
  if (p.scores) {
    r.uncertainty = p.scores->per_volume;
    per_slice = p.scores->per_slice;
  }
  r.slices = metrics::per_slice_metrics(p.mask, gt, r.annotated_slice, per_slice);
  const SoftVolume* var = p.scores ? &p.distribution.variance : nullptr;
  if (spec.kind == phantom::Kind::CappedCylinder) r.cap = cap_report(spec, p.mask, gt, var, r.annotated_slice);
  if (spec.kind == phantom::Kind::BranchingY) r.branch = branch_report(spec, p.mask, gt, r.slices);
  return r;
}

}  // namespace spuq::bench

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/segmetrics/metrics.hpp"
#include "spuq/volume.hpp"

namespace spuq::metrics {

// One z-slice as a depth-1 grid, keeping in-plane spacing.
inline MaskVolume slice_mask(const MaskVolume& m, std::size_t z) {
  MaskVolume s(m.height(), m.width(), 1, 0, m.spacing());
  auto src = m.slice(z);
  std::copy(src.begin(), src.end(), s.values().begin());
  return s;
}

struct SliceRecord {
  std::size_t slice = 0;
  std::size_t distance = 0;  // |slice - annotated slice|
  double dsc = 0.0;
  double surface_dice = 0.0;
  double uncertainty = std::numeric_limits<double>::quiet_NaN();
  std::size_t gt_area = 0;
  std::size_t pred_area = 0;
};

// 2D metrics of every slice. `slice_uncertainty` may be empty.
inline std::vector<SliceRecord> per_slice_metrics(const MaskVolume& pred, const MaskVolume& gt,
                                                  std::size_t annotated_slice,
                                                  const std::vector<double>& slice_uncertainty = {},
                                                  double tau_mm = 1.0) {
  require_same_shape(pred, gt, "per_slice_metrics");
  if (!slice_uncertainty.empty() && slice_uncertainty.size() != gt.depth()) {
    throw std::invalid_argument("per_slice_metrics: one uncertainty value per slice expected");
  }
  std::vector<SliceRecord> out;
  for (std::size_t z = 0; z < gt.depth(); ++z) {
    const auto p = slice_mask(pred, z), g = slice_mask(gt, z);
    SliceRecord r;
    r.slice = z;
    r.distance = z > annotated_slice ? z - annotated_slice : annotated_slice - z;
    r.dsc = dsc(p, g);
    r.surface_dice = surface_dice(p, g, gt.spacing(), tau_mm);
    if (!slice_uncertainty.empty()) r.uncertainty = slice_uncertainty[z];
    r.gt_area = count_foreground(g.values());
    r.pred_area = count_foreground(p.values());
    out.push_back(r);
  }
  return out;
}

struct TrendOptions {
  // 0 buckets by slice count; otherwise by physical distance rounded to this width.
  double bucket_mm = 0.0;
  // Slices where both prediction and ground truth are empty carry no signal.
  bool skip_empty = true;
};

struct VolumeSlices {
  std::vector<SliceRecord> slices;
  double spacing_z = 1.0;
};

struct TrendBucket {
  double distance = 0.0;
  MeanStd dsc, surface_dice, uncertainty;
};

struct TrendSeries {
  std::vector<TrendBucket> buckets;  // ascending distance
  std::string unit = "slices";
};

inline TrendSeries trend_analysis(const std::vector<VolumeSlices>& volumes, const TrendOptions& opt = {}) {
  if (volumes.empty()) throw std::invalid_argument("trend_analysis: no records");
  struct Acc {
    std::vector<double> dsc, sd, unc;
  };
  std::map<long, Acc> acc;
  for (const auto& v : volumes) {
    for (const auto& r : v.slices) {
      if (opt.skip_empty && r.gt_area == 0 && r.pred_area == 0 && r.distance != 0) continue;
      const long key = opt.bucket_mm > 0.0
                           ? std::lround(static_cast<double>(r.distance) * v.spacing_z / opt.bucket_mm)
                           : static_cast<long>(r.distance);
      auto& a = acc[key];
      a.dsc.push_back(r.dsc);
      a.sd.push_back(r.surface_dice);
      if (!std::isnan(r.uncertainty)) a.unc.push_back(r.uncertainty);
    }
  }
  TrendSeries t;
  t.unit = opt.bucket_mm > 0.0 ? "mm" : "slices";
  for (const auto& [key, a] : acc) {
    TrendBucket b;
    b.distance = opt.bucket_mm > 0.0 ? static_cast<double>(key) * opt.bucket_mm : static_cast<double>(key);
    b.dsc = mean_std(a.dsc);
    b.surface_dice = mean_std(a.sd);
    b.uncertainty = mean_std(a.unc);
    t.buckets.push_back(b);
  }
  return t;
}

struct TrendFlags {
  Correlation dsc_rho;          // expected <= 0
  Correlation surface_dice_rho;  // expected <= 0
  Correlation uncertainty_rho;  // expected >= 0
};

// Spearman correlation of bucket distance against bucket means.
inline TrendFlags trend_flags(const TrendSeries& t) {
  std::vector<double> d, dsc_m, sd_m, ud, unc_m;
  for (const auto& b : t.buckets) {
    d.push_back(b.distance);
    dsc_m.push_back(b.dsc.mean);
    sd_m.push_back(b.surface_dice.mean);
    if (b.uncertainty.n > 0) {
      ud.push_back(b.distance);
      unc_m.push_back(b.uncertainty.mean);
    }
  }
  return {spearman_rho(d, dsc_m), spearman_rho(d, sd_m), spearman_rho(ud, unc_m)};
}

}  // namespace spuq::metrics

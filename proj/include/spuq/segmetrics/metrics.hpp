#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/segmetrics/surface.hpp"
#include "spuq/volume.hpp"

namespace spuq::metrics {

// Dice similarity in percent; two empty masks agree perfectly.
inline double dsc(const MaskVolume& pred, const MaskVolume& gt) {
  require_same_shape(pred, gt, "dsc");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

// Mean over both surfaces of the fraction of boundary voxels lying within
// tau_mm of the other surface, in percent.
inline double surface_dice(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing, double tau_mm = 1.0,
                           DistanceMethod method = DistanceMethod::Auto) {
  require_same_shape(pred, gt, "surface_dice");
  if (!(tau_mm > 0.0)) throw std::invalid_argument("surface_dice: tolerance must be > 0");
  const auto sd = surface_distances(pred, gt, spacing, method);
  if (sd.pred_to_gt.empty() && sd.gt_to_pred.empty()) return 100.0;
  if (sd.pred_to_gt.empty() || sd.gt_to_pred.empty()) return 0.0;
  auto frac = [tau_mm](const std::vector<double>& d) {
    const auto n = std::count_if(d.begin(), d.end(), [tau_mm](double v) { return v <= tau_mm + 1e-12; });
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  return 100.0 * 0.5 * (frac(sd.pred_to_gt) + frac(sd.gt_to_pred));
}

struct HausdorffResult {
  double ahd = 0.0;         // symmetric mean of the directed averages
  double pred_to_gt = 0.0;  // directed average surface distance
  double gt_to_pred = 0.0;
};

inline HausdorffResult average_hausdorff(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing,
                                         DistanceMethod method = DistanceMethod::Auto) {
  require_same_shape(pred, gt, "average_hausdorff");
  const auto sd = surface_distances(pred, gt, spacing, method);
  if (sd.pred_to_gt.empty() || sd.gt_to_pred.empty()) {
    throw std::invalid_argument("average_hausdorff: undefined for an empty mask");
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  HausdorffResult r;
  r.pred_to_gt = mean(sd.pred_to_gt);
  r.gt_to_pred = mean(sd.gt_to_pred);
  r.ahd = 0.5 * (r.pred_to_gt + r.gt_to_pred);
  return r;
}

enum class CorrelationStatus { Ok, TooFewSamples, LengthMismatch, ConstantInput };

inline const char* to_string(CorrelationStatus s) {
  switch (s) {
    case CorrelationStatus::Ok: return "ok";
    case CorrelationStatus::TooFewSamples: return "too_few_samples";
    case CorrelationStatus::LengthMismatch: return "length_mismatch";
    case CorrelationStatus::ConstantInput: return "constant_input";
  }
  return "unknown";
}

struct Correlation {
  double value = std::numeric_limits<double>::quiet_NaN();
  CorrelationStatus status = CorrelationStatus::Ok;
  bool ok() const { return status == CorrelationStatus::Ok; }
};

inline Correlation pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  Correlation c;
  if (x.size() != y.size()) {
    c.status = CorrelationStatus::LengthMismatch;
    return c;
  }
  if (x.size() < 2) {
    c.status = CorrelationStatus::TooFewSamples;
    return c;
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    c.status = CorrelationStatus::ConstantInput;
    return c;
  }
  c.value = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return c;
}

// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline Correlation spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) return {std::numeric_limits<double>::quiet_NaN(), CorrelationStatus::LengthMismatch};
  return pearson_r(average_ranks(x), average_ranks(y));
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) {
    m.mean = m.std = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

}  // namespace spuq::metrics

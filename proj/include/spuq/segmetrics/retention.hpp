#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace spuq::metrics {

struct RetentionCurve {
  std::vector<double> fractions;
  std::vector<double> errors;
  double r_auc = 0.0;
};

// n evenly spaced retained fractions k/n, k = 1..n.
inline std::vector<double> retention_fractions(std::size_t n_points = 20) {
  if (n_points < 1) throw std::invalid_argument("retention_fractions: n_points must be >= 1");
  std::vector<double> f(n_points);
  for (std::size_t k = 0; k < n_points; ++k) f[k] = static_cast<double>(k + 1) / static_cast<double>(n_points);
  return f;
}

inline RetentionCurve retention_curve(const std::vector<double>& errors, const std::vector<double>& uncertainties,
                                      const std::vector<double>& fractions) {
  if (errors.size() != uncertainties.size()) throw std::invalid_argument("retention_curve: length mismatch");
  if (errors.size() < 2) throw std::invalid_argument("retention_curve: need at least 2 predictions");
  if (fractions.empty() || fractions.back() != 1.0) {
    throw std::invalid_argument("retention_curve: fractions must end at 1.0");
  }
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0) || (i > 0 && !(fractions[i] > fractions[i - 1]))) {
      throw std::invalid_argument("retention_curve: fractions must be strictly ascending in (0, 1]");
    }
  }
  std::vector<std::size_t> order(errors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainties[a] < uncertainties[b]; });

  const double n = static_cast<double>(errors.size());
  RetentionCurve c;
  c.fractions = fractions;
  for (double f : fractions) {
    // The small slack keeps exact products such as (1/3) * 3 from rounding up.
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * n - 1e-9)));
    double s = 0.0;
    for (std::size_t i = 0; i < keep; ++i) s += errors[order[i]];
    c.errors.push_back(s / static_cast<double>(keep));
  }
  for (std::size_t i = 1; i < c.fractions.size(); ++i) {
    c.r_auc += 0.5 * (c.errors[i] + c.errors[i - 1]) * (c.fractions[i] - c.fractions[i - 1]);
  }
  return c;
}

inline RetentionCurve retention_curve(const std::vector<double>& errors, const std::vector<double>& uncertainties,
                                      std::size_t n_points = 20) {
  return retention_curve(errors, uncertainties, retention_fractions(n_points));
}

}  // namespace spuq::metrics

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "spuq/gradcore/rng.hpp"
#include "spuq/volume.hpp"

namespace spuq::prop {

struct RefineOptions {
  double gamma = 10.0;
  std::size_t n_support = 256;
  double ridge = 1e-3;
  double confident_fg = 0.8;
  double confident_bg = 0.2;
};

struct RefineResult {
  Image2D mask;             // binary
  bool degenerate = false;  // no two-class sample; plain thresholding used
  std::size_t reclassified = 0;
};

namespace detail {

// k draws without replacement from `pool` (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                           grad::Rng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace detail

// Kernel regularized least squares on (intensity, x / (W-1), y / (H-1)) with an
// RBF kernel exp(-gamma |a - b|^2). Fitted on confident pixels (labels +-1,
// classes balanced) and used to relabel only the ambiguous band.
inline RefineResult refine_mask_kernel(const Image2D& soft, const Image2D& intensity, const RefineOptions& opt,
                                       std::uint64_t seed) {
  RefineResult res{threshold(soft, 0.5f), false, 0};
  std::vector<std::size_t> fg, bg, ambiguous;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    const double v = soft.data[i];
    if (v >= opt.confident_fg)
      fg.push_back(i);
    else if (v <= opt.confident_bg)
      bg.push_back(i);
    else
      ambiguous.push_back(i);
  }
  if (ambiguous.empty()) return res;
  if (fg.empty() || bg.empty()) {
    res.degenerate = true;
    return res;
  }

  auto rng = grad::Rng::stream(seed, "refine_support");
  const std::size_t half = opt.n_support / 2;
  auto pick_fg = detail::sample_without_replacement(fg, half, rng);
  auto pick_bg = detail::sample_without_replacement(bg, opt.n_support - pick_fg.size(), rng);

  const double sx = soft.width > 1 ? 1.0 / static_cast<double>(soft.width - 1) : 0.0;
  const double sy = soft.height > 1 ? 1.0 / static_cast<double>(soft.height - 1) : 0.0;
  auto feature = [&](std::size_t i) {
    return Eigen::Vector3d(intensity.data[i], static_cast<double>(i % soft.width) * sx,
                           static_cast<double>(i / soft.width) * sy);
  };

  const std::size_t n = pick_fg.size() + pick_bg.size();
  Eigen::MatrixXd support(n, 3);
  Eigen::VectorXd y(n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool is_fg = k < pick_fg.size();
    support.row(static_cast<Eigen::Index>(k)) = feature(is_fg ? pick_fg[k] : pick_bg[k - pick_fg.size()]);
    y(static_cast<Eigen::Index>(k)) = is_fg ? 1.0 : -1.0;
  }
  Eigen::MatrixXd kmat(n, n);
  for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(n); ++a)
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double v = std::exp(-opt.gamma * (support.row(a) - support.row(b)).squaredNorm());
      kmat(a, b) = kmat(b, a) = v;
    }
  kmat.diagonal().array() += opt.ridge;
  const Eigen::VectorXd alpha = kmat.llt().solve(y);

  for (std::size_t i : ambiguous) {
    const Eigen::RowVector3d f = feature(i).transpose();
    const double score = ((support.rowwise() - f).rowwise().squaredNorm().array() * -opt.gamma).exp().matrix().dot(alpha);
    const float label = score > 0.0 ? 1.0f : 0.0f;
    if (label != res.mask.data[i]) ++res.reclassified;
    res.mask.data[i] = label;
  }
  return res;
}

}  // namespace spuq::prop

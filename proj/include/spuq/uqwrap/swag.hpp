#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "spuq/gradcore.hpp"

namespace spuq::uq {

// Running first and second moments of a list of parameter tensors; the fitted
// posterior is N(mean, diag(max(sq_mean - mean^2, 0))).
class SwagStats {
 public:
  SwagStats() = default;

  void collect(const std::vector<const grad::Tensor*>& params) {
    if (n_ == 0) {
      for (const auto* p : params) {
        mean_.emplace_back(p->shape(), 0.0f);
        sq_mean_.emplace_back(p->shape(), 0.0f);
        var_.emplace_back(p->shape(), 0.0f);
        acc_.emplace_back(p->size(), 0.0);
        acc_sq_.emplace_back(p->size(), 0.0);
      }
    }
    if (params.size() != mean_.size()) throw std::invalid_argument("SwagStats: parameter count changed");
    ++n_;
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (params[t]->shape() != mean_[t].shape()) throw std::invalid_argument("SwagStats: parameter shape changed");
      for (std::size_t i = 0; i < params[t]->size(); ++i) {
        const double v = (*params[t])[i];
        acc_[t][i] += v;
        acc_sq_[t][i] += v * v;
        const double m = acc_[t][i] / static_cast<double>(n_), q = acc_sq_[t][i] / static_cast<double>(n_);
        mean_[t][i] = static_cast<float>(m);
        sq_mean_[t][i] = static_cast<float>(q);
        var_[t][i] = static_cast<float>(std::max(q - m * m, 0.0));
      }
    }
  }

  std::size_t n_collected() const { return n_; }
  const std::vector<grad::Tensor>& mean() const { return mean_; }
  const std::vector<grad::Tensor>& sq_mean() const { return sq_mean_; }

  // Computed in double precision from the running sums, stored as float.
  const std::vector<grad::Tensor>& variance() const {
    require_fitted();
    return var_;
  }

  // theta ~ N(mean, scale^2 diag(var)).
  std::vector<grad::Tensor> sample(grad::Rng& rng, double scale) const {
    const auto& var = variance();
    std::vector<grad::Tensor> out = mean_;
    for (std::size_t t = 0; t < out.size(); ++t)
      for (std::size_t i = 0; i < out[t].size(); ++i) {
        out[t][i] += static_cast<float>(scale * std::sqrt(static_cast<double>(var[t][i])) * rng.normal());
      }
    return out;
  }

  // Restores serialized state; sampling afterwards matches the original exactly.
  static SwagStats from_moments(std::vector<grad::Tensor> mean, std::vector<grad::Tensor> sq_mean,
                                std::vector<grad::Tensor> variance, std::size_t n) {
    if (mean.size() != sq_mean.size() || mean.size() != variance.size()) {
      throw std::invalid_argument("SwagStats: moment lists differ in length");
    }
    SwagStats s;
    s.n_ = n;
    for (std::size_t t = 0; t < mean.size(); ++t) {
      if (mean[t].shape() != sq_mean[t].shape() || mean[t].shape() != variance[t].shape()) {
        throw std::invalid_argument("SwagStats: moment shapes differ");
      }
      s.acc_.emplace_back(mean[t].size());
      s.acc_sq_.emplace_back(mean[t].size());
      for (std::size_t i = 0; i < mean[t].size(); ++i) {
        s.acc_[t][i] = static_cast<double>(mean[t][i]) * static_cast<double>(n);
        s.acc_sq_[t][i] = static_cast<double>(sq_mean[t][i]) * static_cast<double>(n);
      }
    }
    s.mean_ = std::move(mean);
    s.sq_mean_ = std::move(sq_mean);
    s.var_ = std::move(variance);
    return s;
  }

 private:
  void require_fitted() const {
    if (n_ < 2) throw std::logic_error("SwagStats: need at least two snapshots, have " + std::to_string(n_));
  }

  std::size_t n_ = 0;
  std::vector<grad::Tensor> mean_, sq_mean_, var_;
  std::vector<std::vector<double>> acc_, acc_sq_;
};

}  // namespace spuq::uq

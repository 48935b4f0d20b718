#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "spuq/gradcore/tensor.hpp"

namespace spuq::grad {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::int64_t steps = 200;
  std::int64_t batch_size = 2;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
    if (steps < 0) throw std::invalid_argument("sgd: steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("sgd: batch_size must be >= 1");
  }
};

// Heavy-ball SGD: v <- m v + g, p <- p - lr v.
class Sgd {
 public:
  Sgd(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  explicit Sgd(const SgdConfig& cfg) : Sgd(cfg.learning_rate, cfg.momentum) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: params/grads count mismatch");
    if (velocity_.empty()) {
      for (const Tensor* p : params) velocity_.emplace_back(p->shape(), 0.0f);
    }
    if (velocity_.size() != params.size()) throw std::invalid_argument("sgd_step: parameter set changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      Tensor& v = velocity_[i];
      if (p.shape() != g.shape() || p.shape() != v.shape()) {
        throw ShapeError("sgd_step: gradient shape " + shape_str(g.shape()) + " vs parameter " + shape_str(p.shape()));
      }
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = static_cast<float>(momentum_ * v[j] + g[j]);
        p[j] = static_cast<float>(p[j] - lr_ * v[j]);
      }
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace spuq::grad

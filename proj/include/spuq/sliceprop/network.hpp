#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/gradcore.hpp"
#include "spuq/sliceprop/types.hpp"

namespace spuq::prop {

using grad::Rng;
using grad::Shape;
using grad::Tape;
using grad::Tensor;
using grad::Var;

struct ArchConfig {
  // Affinity propagator.
  std::size_t edge_channels = 4;
  std::size_t hidden_channels = 16;
  std::size_t feature_channels = 8;
  std::size_t window_radius = 5;
  double feature_gain = 10.0;  // fixed multiplier on the feature head output
  double temperature = 1.0;
  bool verify = true;
  double verify_threshold = 0.8;
  // Flow propagator.
  std::size_t flow_channels1 = 8;
  std::size_t flow_channels2 = 16;
  double flow_gain = 1.0;  // fixed multiplier on the displacement head output
  bool flow_standardize = true;
  double lambda = 0.85;
  std::size_t ssim_window = 7;
  double ssim_c1 = 1e-4;
  double ssim_c2 = 9e-4;
  std::size_t neighborhood = 2;
  std::size_t crop_margin = 1;
  bool refine = true;
  double refine_gamma = 10.0;
  std::size_t refine_support = 256;
  double refine_ridge = 1e-3;

  void validate() const {
    if (edge_channels < 2) throw std::invalid_argument("arch: edge_channels must be >= 2");
    if (hidden_channels < 1 || feature_channels < 1 || flow_channels1 < 1 || flow_channels2 < 1) {
      throw std::invalid_argument("arch: channel counts must be positive");
    }
    if (window_radius < 1) throw std::invalid_argument("arch: window_radius must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("arch: temperature must be > 0");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("arch: lambda must lie in [0, 1]");
    if (ssim_window < 1 || ssim_window % 2 == 0) throw std::invalid_argument("arch: ssim_window must be odd");
    if (neighborhood < 1) throw std::invalid_argument("arch: neighborhood must be >= 1");
    if (!(refine_gamma > 0.0) || refine_support < 2 || !(refine_ridge > 0.0)) {
      throw std::invalid_argument("arch: invalid refinement settings");
    }
  }
};

// Stochastic structure built into a network.
struct StochasticConfig {
  double dropout_rate = 0.0;  // dropout after every ReLU
  bool concrete = false;      // relaxed spatial dropout on the input of every conv but the first
  double concrete_temperature = 0.1;
  double concrete_init_p = 0.1;
  double weight_reg = 1e-6;
  double dropout_reg = 1e-5;
  std::size_t members = 0;  // batch-ensemble members, 0 for a plain network
  double member_factor_std = 0.1;
};

struct ConvParam {
  Tensor weight;  // [out, in, k...]
  Tensor bias;    // [out]
};

struct Network {
  std::vector<ConvParam> convs;
  std::vector<Tensor> concrete_logits;  // scalar per gated conv (all but the first) under concrete dropout
  // Batch-ensemble factors, [member][conv]: r scales outputs, s scales inputs.
  std::vector<std::vector<Tensor>> member_r, member_s;

  // Every trainable tensor, in a fixed order, with a stable name.
  std::vector<std::pair<std::string, Tensor*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".weight", &convs[i].weight);
      out.emplace_back("conv" + std::to_string(i) + ".bias", &convs[i].bias);
    }
    for (std::size_t i = 0; i < concrete_logits.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i + 1) + ".logit_p", &concrete_logits[i]);
    }
    for (std::size_t m = 0; m < member_r.size(); ++m)
      for (std::size_t i = 0; i < member_r[m].size(); ++i) {
        out.emplace_back("member" + std::to_string(m) + ".conv" + std::to_string(i) + ".r", &member_r[m][i]);
        out.emplace_back("member" + std::to_string(m) + ".conv" + std::to_string(i) + ".s", &member_s[m][i]);
      }
    return out;
  }

  // Shared conv weights and biases only.
  std::vector<Tensor*> weight_tensors() {
    std::vector<Tensor*> out;
    for (auto& c : convs) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    }
    return out;
  }
};

struct PropagatorModel {
  PropagatorKind kind = PropagatorKind::Affinity;
  ArchConfig arch;
  StochasticConfig stochastic;
  grad::InitSpec init;
  Network net;
  std::vector<double> loss_history;
  std::size_t clamp_events = 0;  // concrete probabilities pulled back into range

  std::size_t members() const { return stochastic.members; }
  std::vector<double> dropout_probabilities() const {
    std::vector<double> p;
    for (const auto& l : net.concrete_logits) p.push_back(grad::detail::sigmoid(l[0]));
    return p;
  }
};

// Per-forward-pass behaviour.
struct RunMode {
  bool stochastic = false;  // sample dropout masks and concrete gates
  std::size_t member = 0;   // batch-ensemble member
  Rng* rng = nullptr;       // required when stochastic
};

// A network's tensors registered on one tape.
class BoundNet {
 public:
  BoundNet(Tape& tape, const PropagatorModel& model, bool trainable) : tape_(&tape), model_(&model) {
    auto reg = [&](const Tensor& t) { return trainable ? tape.param(t) : tape.constant(t); };
    // Only reads the tensors; named_tensors() hands out mutable pointers for the optimizer.
    for (auto& t : const_cast<Network&>(model.net).named_tensors()) vars_.push_back(reg(*t.second));
  }

  Tape& tape() { return *tape_; }
  const PropagatorModel& model() const { return *model_; }
  const std::vector<Var>& vars() const { return vars_; }

  Var weight(std::size_t i) const { return vars_[2 * i]; }
  Var bias(std::size_t i) const { return vars_[2 * i + 1]; }
  // Gate logit of conv i >= 1.
  Var logit(std::size_t i) const { return vars_[2 * n_convs() + i - 1]; }
  Var factor_r(std::size_t m, std::size_t i) const { return vars_[factor_base() + 2 * (m * n_convs() + i)]; }
  Var factor_s(std::size_t m, std::size_t i) const { return vars_[factor_base() + 2 * (m * n_convs() + i) + 1]; }

  // One convolution with the model's stochastic structure applied: relaxed
  // gate on the input (all but the first conv), batch-ensemble scaling of
  // input channels by s and output channels (bias included) by r.
  Var conv(std::size_t i, Var x, const RunMode& mode) {
    const auto& st = model_->stochastic;
    if (st.concrete && i > 0) {
      if (mode.stochastic) {
        if (!mode.rng) throw std::invalid_argument("stochastic forward requires an rng");
        x = grad::concrete_gate(x, logit(i), st.concrete_temperature, *mode.rng);
      }
    }
    const bool be = st.members > 0;
    if (be) {
      if (mode.member >= st.members) {
        throw std::out_of_range("batch-ensemble member " + std::to_string(mode.member) + " out of range (" +
                                std::to_string(st.members) + " members)");
      }
      x = grad::scale_channels(x, factor_s(mode.member, i));
    }
    const Var w = weight(i), b = bias(i);
    Var y = w.shape().size() == 5 ? grad::conv3d(x, w, b) : grad::conv2d(x, w, b);
    if (be) y = grad::scale_channels(y, factor_r(mode.member, i));
    return y;
  }

  // ReLU followed by dropout when the model carries it.
  Var activation(Var x, const RunMode& mode) {
    x = grad::relu(x);
    const double rate = model_->stochastic.dropout_rate;
    if (rate > 0.0 && mode.stochastic) {
      if (!mode.rng) throw std::invalid_argument("stochastic forward requires an rng");
      x = grad::dropout(x, rate, *mode.rng);
    }
    return x;
  }

  // Sum of concrete-dropout penalties over gated layers.
  std::optional<Var> concrete_penalty() {
    const auto& st = model_->stochastic;
    if (!st.concrete) return std::nullopt;
    std::optional<Var> total;
    for (std::size_t i = 1; i < n_convs(); ++i) {
      Var r = grad::concrete_regularizer(logit(i), grad::sum_squares(weight(i)), st.weight_reg, st.dropout_reg);
      total = total ? grad::add(*total, r) : r;
    }
    return total;
  }

 private:
  std::size_t n_convs() const { return model_->net.convs.size(); }
  std::size_t factor_base() const { return 2 * n_convs() + model_->net.concrete_logits.size(); }

  Tape* tape_;
  const PropagatorModel* model_;
  std::vector<Var> vars_;
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Allocates conv layers of the given weight shapes plus the stochastic extras.
inline void build_network(PropagatorModel& m, const std::vector<Shape>& weight_shapes, bool zero_last) {
  m.net = Network{};
  for (std::size_t i = 0; i < weight_shapes.size(); ++i) {
    ConvParam c;
    const bool zero = zero_last && i + 1 == weight_shapes.size();
    if (zero) {
      c.weight = Tensor(weight_shapes[i], 0.0f);
    } else {
      grad::InitSpec spec = m.init;
      spec.seed = Rng::stream(m.init.seed, "layer_init", i).next_u64();
      c.weight = grad::init_weights(weight_shapes[i], spec);
    }
    c.bias = Tensor(Shape{weight_shapes[i][0]}, 0.0f);
    m.net.convs.push_back(std::move(c));
  }
  const auto& st = m.stochastic;
  if (st.dropout_rate < 0.0 || st.dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate must lie in [0, 1)");
  if (st.concrete) {
    if (!(st.concrete_init_p > 0.0 && st.concrete_init_p < 1.0) || !(st.concrete_temperature > 0.0)) {
      throw std::invalid_argument("invalid concrete dropout settings");
    }
    for (std::size_t i = 1; i < weight_shapes.size(); ++i) {
      m.net.concrete_logits.push_back(Tensor::scalar(static_cast<float>(logit(st.concrete_init_p))));
    }
  }
  if (st.members > 0) {
    auto rng = Rng::stream(m.init.seed, "member_factors");
    for (std::size_t k = 0; k < st.members; ++k) {
      std::vector<Tensor> r, s;
      for (const auto& ws : weight_shapes) {
        Tensor rt(Shape{ws[0]}), stt(Shape{ws[1]});
        for (float& v : rt.values()) v = static_cast<float>(1.0 + rng.normal(0.0, st.member_factor_std));
        for (float& v : stt.values()) v = static_cast<float>(1.0 + rng.normal(0.0, st.member_factor_std));
        r.push_back(std::move(rt));
        s.push_back(std::move(stt));
      }
      m.net.member_r.push_back(std::move(r));
      m.net.member_s.push_back(std::move(s));
    }
  }
}

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(std::int64_t step, std::vector<double> history, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step),
        history_(std::move(history)) {}
  std::int64_t step() const { return step_; }
  const std::vector<double>& history() const { return history_; }

 private:
  std::int64_t step_;
  std::vector<double> history_;
};

// Data loss of one sample for one forward mode; draws data from `data_rng`.
using SampleLoss = std::function<Var(BoundNet&, const RunMode&, Rng& data_rng)>;
using StepCallback = std::function<void(std::int64_t step, PropagatorModel&)>;

struct TrainSchedule {
  grad::SgdConfig sgd;
  std::uint64_t seed = 0;
  std::int64_t steps = -1;      // overrides sgd.steps when >= 0
  std::uint64_t stream_offset = 0;  // distinguishes continued runs
};

// SGD over all model tensors. Each step averages the loss over the batch and,
// for batch ensembles, over all members on the same samples. Records the data
// loss per step in model.loss_history.
inline void train_network(PropagatorModel& m, const TrainSchedule& sched, const SampleLoss& sample_loss,
                          const StepCallback& on_step = {}) {
  sched.sgd.validate();
  const std::int64_t steps = sched.steps >= 0 ? sched.steps : sched.sgd.steps;
  grad::Sgd opt(sched.sgd);
  const std::size_t members = std::max<std::size_t>(1, m.stochastic.members);
  const double lo = logit(1e-4), hi = logit(1.0 - 1e-4);
  for (std::int64_t step = 0; step < steps; ++step) {
    const std::uint64_t key = sched.stream_offset + static_cast<std::uint64_t>(step);
    Tape tape;
    BoundNet bn(tape, m, true);
    std::optional<Var> total;
    double data_loss = 0.0;
    try {
      for (std::int64_t b = 0; b < sched.sgd.batch_size; ++b) {
        for (std::size_t k = 0; k < members; ++k) {
          // Members see the same data draw.
          Rng data_rng = Rng::stream(sched.seed, "train_batch", key * 1000 + static_cast<std::uint64_t>(b));
          Rng noise = Rng::stream(sched.seed, "train_noise", (key * 1000 + static_cast<std::uint64_t>(b)) * 64 + k);
          RunMode mode{true, k, &noise};
          Var l = sample_loss(bn, mode, data_rng);
          data_loss += l.value()[0];
          total = total ? grad::add(*total, l) : l;
        }
      }
      const double denom = static_cast<double>(sched.sgd.batch_size) * static_cast<double>(members);
      Var loss = grad::scale(*total, static_cast<float>(1.0 / denom));
      data_loss /= denom;
      if (auto pen = bn.concrete_penalty()) loss = grad::add(loss, *pen);
      tape.backward(loss);
    } catch (const grad::NonFiniteError& e) {
      throw TrainingDivergedError(step, m.loss_history, e.what());
    }
    if (!std::isfinite(data_loss)) throw TrainingDivergedError(step, m.loss_history, "non-finite loss");
    auto named = m.net.named_tensors();
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < named.size(); ++i) {
      params.push_back(named[i].second);
      grads.push_back(tape.grad(bn.vars()[i]));
    }
    opt.step(params, grads);
    for (auto& l : m.net.concrete_logits) {
      if (l[0] < lo || l[0] > hi) {
        if (m.clamp_events++ == 0) {
          std::fprintf(stderr, "warning: concrete dropout probability left (1e-4, 1-1e-4); clamped\n");
        }
        l[0] = static_cast<float>(std::clamp<double>(l[0], lo, hi));
      }
    }
    for (auto* p : params) {
      if (!p->all_finite()) throw TrainingDivergedError(step, m.loss_history, "non-finite parameter");
    }
    m.loss_history.push_back(data_loss);
    if (on_step) on_step(step, m);
  }
}

// Mean of the first and last `window` entries of a loss history.
inline std::pair<double, double> smoothed_endpoints(const std::vector<double>& h, std::size_t window = 20) {
  if (h.empty()) return {0.0, 0.0};
  const std::size_t w = std::min(window, h.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    a += h[i];
    b += h[h.size() - 1 - i];
  }
  return {a / static_cast<double>(w), b / static_cast<double>(w)};
}

}  // namespace spuq::prop

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "spuq/gradcore/rng.hpp"
#include "spuq/gradcore/tensor.hpp"

namespace spuq::grad {

enum class InitMode { base, kaiming_uniform, xavier_uniform, custom_normal };

inline std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::base: return "base";
    case InitMode::kaiming_uniform: return "kaiming_uniform";
    case InitMode::xavier_uniform: return "xavier_uniform";
    case InitMode::custom_normal: return "custom_normal";
  }
  return "base";
}

inline InitMode init_mode_from_string(std::string_view s) {
  if (s == "base") return InitMode::base;
  if (s == "kaiming_uniform") return InitMode::kaiming_uniform;
  if (s == "xavier_uniform") return InitMode::xavier_uniform;
  if (s == "custom_normal") return InitMode::custom_normal;
  throw std::invalid_argument("unknown init mode '" + std::string(s) + "'");
}

struct InitSpec {
  InitMode mode = InitMode::base;
  std::uint64_t seed = 0;
  double custom_normal_std = 0.05;
};

// Fan sizes for a weight of shape [out, in, k...] (or [out, in] for linear).
struct Fans {
  double in;
  double out;
};

inline Fans compute_fans(const Shape& shape) {
  if (shape.empty()) throw ShapeError("init_weights: empty shape");
  if (shape.size() == 1) return {static_cast<double>(shape[0]), static_cast<double>(shape[0])};
  double receptive = 1.0;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<double>(shape[i]);
  return {static_cast<double>(shape[1]) * receptive, static_cast<double>(shape[0]) * receptive};
}

inline Tensor init_weights(const Shape& shape, const InitSpec& spec) {
  Tensor out(shape);
  const Fans fans = compute_fans(shape);
  Rng rng = Rng::stream(spec.seed, "init_weights", static_cast<std::uint64_t>(spec.mode));
  auto fill_uniform = [&](double bound) {
    for (float& v : out.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  };
  switch (spec.mode) {
    case InitMode::base: fill_uniform(1.0 / std::sqrt(fans.in)); break;
    case InitMode::kaiming_uniform: fill_uniform(std::sqrt(6.0 / fans.in)); break;
    case InitMode::xavier_uniform: fill_uniform(std::sqrt(6.0 / (fans.in + fans.out))); break;
    case InitMode::custom_normal:
      for (float& v : out.values()) v = static_cast<float>(rng.normal(0.0, spec.custom_normal_std));
      break;
  }
  return out;
}

}  // namespace spuq::grad

#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include "spuq/gradcore/init.hpp"

namespace spuq::uq {

enum class UqKind { None, DeepEnsemble, BatchEnsemble, McDropout, ConcreteDropout, Swag };

inline constexpr std::array<UqKind, 6> kAllUqKinds = {UqKind::None,      UqKind::DeepEnsemble,    UqKind::BatchEnsemble,
                                                      UqKind::McDropout, UqKind::ConcreteDropout, UqKind::Swag};

inline std::string to_string(UqKind k) {
  switch (k) {
    case UqKind::None: return "none";
    case UqKind::DeepEnsemble: return "deep_ensemble";
    case UqKind::BatchEnsemble: return "batch_ensemble";
    case UqKind::McDropout: return "mc_dropout";
    case UqKind::ConcreteDropout: return "concrete_dropout";
    case UqKind::Swag: return "swag";
  }
  return "?";
}

inline UqKind uq_kind_from_string(std::string_view s) {
  for (auto k : kAllUqKinds)
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown UQ strategy '" + std::string(s) + "'");
}

struct ConcreteSettings {
  double temperature = 0.1;
  double weight_reg = 1e-6;
  double dropout_reg = 1e-5;
  double init_p = 0.1;
};

struct SwagSettings {
  std::size_t collect_every = 5;  // steps between snapshots
  std::size_t n_collect = 20;     // snapshots after the base run
  double sample_scale = 0.5;
};

struct UqStrategy {
  UqKind kind = UqKind::None;
  std::size_t n_members = 4;
  std::size_t n_samples = 30;
  double dropout_rate = 0.2;
  double member_factor_std = 0.1;
  ConcreteSettings concrete;
  SwagSettings swag;

  bool is_ensemble() const { return kind == UqKind::DeepEnsemble || kind == UqKind::BatchEnsemble; }
  bool is_sampling() const {
    return kind == UqKind::McDropout || kind == UqKind::ConcreteDropout || kind == UqKind::Swag;
  }

  void validate() const {
    if (is_ensemble() && n_members < 2) throw std::invalid_argument("ensembles need n_members >= 2");
    if (is_sampling() && n_samples < 2) throw std::invalid_argument("sampling strategies need n_samples >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate must lie in [0, 1)");
    if (!(concrete.temperature > 0.0) || !(concrete.init_p > 0.0 && concrete.init_p < 1.0) ||
        concrete.weight_reg < 0.0 || concrete.dropout_reg < 0.0) {
      throw std::invalid_argument("invalid concrete dropout settings");
    }
    if (swag.collect_every < 1) throw std::invalid_argument("swag.collect_every must be >= 1");
    if (kind == UqKind::Swag && swag.n_collect < 2) throw std::invalid_argument("swag.n_collect must be >= 2");
    if (swag.sample_scale < 0.0) throw std::invalid_argument("swag.sample_scale must be >= 0");
    if (member_factor_std < 0.0) throw std::invalid_argument("member_factor_std must be >= 0");
  }
};

// Deep-ensemble member i cycles through the four initialization schemes.
inline grad::InitMode member_init_mode(std::size_t i) {
  static constexpr std::array<grad::InitMode, 4> modes = {grad::InitMode::base, grad::InitMode::kaiming_uniform,
                                                         grad::InitMode::xavier_uniform,
                                                         grad::InitMode::custom_normal};
  return modes[i % modes.size()];
}

}  // namespace spuq::uq

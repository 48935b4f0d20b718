#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/parallel.hpp"
#include "spuq/sliceprop.hpp"
#include "spuq/uqwrap/strategy.hpp"
#include "spuq/uqwrap/swag.hpp"

namespace spuq::uq {

using prop::PropagatorKind;
using prop::PropagatorModel;

struct TrainConfig {
  grad::SgdConfig sgd;
  prop::ArchConfig arch;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Everything a strategy needs at prediction time.
struct UqArtifacts {
  PropagatorKind propagator = PropagatorKind::Affinity;
  UqStrategy strategy;
  std::vector<PropagatorModel> models;  // n_members for deep ensembles, otherwise one
  std::optional<SwagStats> swag;
};

inline prop::StochasticConfig stochastic_config(const UqStrategy& s) {
  prop::StochasticConfig st;
  switch (s.kind) {
    case UqKind::McDropout:
      st.dropout_rate = s.dropout_rate;
      break;
    case UqKind::ConcreteDropout:
      st.concrete = true;
      st.concrete_temperature = s.concrete.temperature;
      st.concrete_init_p = s.concrete.init_p;
      st.weight_reg = s.concrete.weight_reg;
      st.dropout_reg = s.concrete.dropout_reg;
      break;
    case UqKind::BatchEnsemble:
      st.members = s.n_members;
      st.member_factor_std = s.member_factor_std;
      break;
    default:
      break;
  }
  return st;
}

inline PropagatorModel train_single(PropagatorKind kind, const std::vector<Volume3D>& volumes, const TrainConfig& cfg,
                                    const prop::StochasticConfig& st, const grad::InitSpec& init) {
  PropagatorModel m = prop::make_model(kind, cfg.arch, st, init);
  prop::train_model(m, volumes, {cfg.sgd, cfg.seed});
  return m;
}

// Members share data and configuration and differ only in their initialization.
inline std::vector<PropagatorModel> train_deep_ensemble(PropagatorKind kind, const std::vector<Volume3D>& volumes,
                                                        const TrainConfig& cfg, const UqStrategy& s) {
  if (s.kind != UqKind::DeepEnsemble) throw std::invalid_argument("train_deep_ensemble: strategy is not deep_ensemble");
  s.validate();
  std::vector<PropagatorModel> members(s.n_members);
  parallel_for(s.n_members, cfg.jobs, [&](std::size_t i) {
    // Beyond four members the schemes repeat with a fresh seed.
    const std::uint64_t seed = i < 4 ? cfg.seed : grad::Rng::stream(cfg.seed, "ensemble_member", i).next_u64();
    members[i] = train_single(kind, volumes, cfg, {}, {member_init_mode(i), seed});
  });
  return members;
}

inline PropagatorModel concrete_dropout_train(PropagatorKind kind, const std::vector<Volume3D>& volumes,
                                              const TrainConfig& cfg, const UqStrategy& s) {
  if (s.kind != UqKind::ConcreteDropout) throw std::invalid_argument("concrete_dropout_train: wrong strategy");
  s.validate();
  return train_single(kind, volumes, cfg, stochastic_config(s), {grad::InitMode::base, cfg.seed});
}

// Continues training `model` with a fresh optimizer for n_collect * collect_every
// steps, snapshotting the shared weights every collect_every steps.
inline SwagStats swag_collect_and_fit(PropagatorModel& model, const std::vector<Volume3D>& volumes,
                                      const grad::SgdConfig& sgd, std::uint64_t seed, const SwagSettings& s) {
  if (s.collect_every < 1) throw std::invalid_argument("swag.collect_every must be >= 1");
  SwagStats stats;
  const auto extra = static_cast<std::int64_t>(s.n_collect * s.collect_every);
  prop::TrainSchedule sched{sgd, seed, extra, static_cast<std::uint64_t>(sgd.steps)};
  prop::train_model(model, volumes, sched, [&](std::int64_t step, PropagatorModel& m) {
    if ((static_cast<std::size_t>(step) + 1) % s.collect_every != 0) return;
    std::vector<const grad::Tensor*> params;
    for (auto* t : m.net.weight_tensors()) params.push_back(t);
    stats.collect(params);
  });
  if (stats.n_collected() < 2) {
    throw std::invalid_argument("swag: collected " + std::to_string(stats.n_collected()) +
                                " snapshots, at least two are required");
  }
  return stats;
}

inline UqArtifacts train_uq(PropagatorKind kind, const std::vector<Volume3D>& volumes, const TrainConfig& cfg,
                            const UqStrategy& s) {
  s.validate();
  UqArtifacts a{kind, s, {}, std::nullopt};
  switch (s.kind) {
    case UqKind::DeepEnsemble:
      a.models = train_deep_ensemble(kind, volumes, cfg, s);
      break;
    case UqKind::Swag: {
      PropagatorModel m = train_single(kind, volumes, cfg, {}, {grad::InitMode::base, cfg.seed});
      a.swag = swag_collect_and_fit(m, volumes, cfg.sgd, cfg.seed, s.swag);
      a.models.push_back(std::move(m));
      break;
    }
    default:
      a.models.push_back(train_single(kind, volumes, cfg, stochastic_config(s), {grad::InitMode::base, cfg.seed}));
  }
  return a;
}

// ------------------------------------------------------------------ prediction

struct PredictionDistribution {
  std::vector<SoftVolume> samples;
  SoftVolume mean;
  SoftVolume variance;  // population variance per voxel

  static PredictionDistribution from_samples(std::vector<SoftVolume> samples) {
    if (samples.empty()) throw std::invalid_argument("prediction distribution needs at least one sample");
    PredictionDistribution d;
    d.mean = SoftVolume::like(samples.front());
    d.variance = SoftVolume::like(samples.front());
    const double n = static_cast<double>(samples.size());
    for (std::size_t i = 0; i < d.mean.size(); ++i) {
      double s = 0.0;
      for (const auto& v : samples) s += v[i];
      const double m = s / n;
      double q = 0.0;
      for (const auto& v : samples) q += (v[i] - m) * (v[i] - m);
      d.mean[i] = static_cast<float>(m);
      d.variance[i] = static_cast<float>(q / n);
    }
    d.samples = std::move(samples);
    return d;
  }
};

struct UncertaintyScores {
  SoftVolume per_voxel;
  MaskVolume region;
  std::vector<double> per_slice;  // NaN where the region misses the slice
  double per_volume = 0.0;
};

// Predicted foreground grown by a voxel-unit ball.
inline MaskVolume uncertainty_region(const MaskVolume& predicted, int radius = 3) {
  MaskVolume out = MaskVolume::like(predicted);
  const long h = static_cast<long>(predicted.height()), w = static_cast<long>(predicted.width()),
             d = static_cast<long>(predicted.depth());
  std::vector<std::array<long, 3>> ball;
  for (long dz = -radius; dz <= radius; ++dz)
    for (long dy = -radius; dy <= radius; ++dy)
      for (long dx = -radius; dx <= radius; ++dx)
        if (dx * dx + dy * dy + dz * dz <= static_cast<long>(radius) * radius) ball.push_back({dx, dy, dz});
  for (long z = 0; z < d; ++z)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        if (!predicted.at(x, y, z)) continue;
        for (const auto& o : ball) {
          const long xx = x + o[0], yy = y + o[1], zz = z + o[2];
          if (xx >= 0 && xx < w && yy >= 0 && yy < h && zz >= 0 && zz < d) out.at(xx, yy, zz) = 1;
        }
      }
  return out;
}

inline UncertaintyScores uncertainty_scores(const SoftVolume& variance, const MaskVolume& predicted, int radius = 3) {
  UncertaintyScores u{variance, uncertainty_region(predicted, radius), {}, 0.0};
  const std::size_t hw = variance.slice_size();
  double total = 0.0, all = 0.0;
  std::size_t count = 0;
  for (std::size_t z = 0; z < variance.depth(); ++z) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = z * hw; i < (z + 1) * hw; ++i) {
      all += variance[i];
      if (!u.region[i]) continue;
      s += variance[i];
      ++n;
    }
    u.per_slice.push_back(n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
    total += s;
    count += n;
  }
  // An empty prediction leaves no region; fall back to the whole volume.
  u.per_volume = count ? total / static_cast<double>(count) : all / static_cast<double>(variance.size());
  return u;
}

struct UqPrediction {
  MaskVolume mask;
  PredictionDistribution distribution;
  std::optional<UncertaintyScores> scores;  // absent for strategy none
  prop::PropagationRecord record;
};

inline std::vector<SoftVolume> run_samples(std::size_t n, std::size_t jobs, prop::PropagationRecord& record,
                                           const std::function<prop::PropagationResult(std::size_t)>& one) {
  std::vector<SoftVolume> out(n);
  std::vector<prop::PropagationRecord> records(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    auto r = one(i);
    out[i] = std::move(r.soft);
    records[i] = std::move(r.record);
  });
  record = std::move(records.front());
  return out;
}

inline PredictionDistribution mc_dropout_sample(const PropagatorModel& model, const Volume3D& volume,
                                                const prop::SliceAnnotation& ann, std::size_t n_samples,
                                                std::uint64_t seed, std::size_t jobs = 1,
                                                prop::PropagationRecord* record = nullptr) {
  prop::PropagationRecord rec;
  auto samples = run_samples(n_samples, jobs, rec, [&](std::size_t i) {
    auto rng = grad::Rng::stream(seed, "mc_sample", i);
    return prop::propagate(model, volume, ann, {true, 0, &rng});
  });
  if (record) *record = std::move(rec);
  return PredictionDistribution::from_samples(std::move(samples));
}

// A copy of `tmpl` with its shared weights replaced.
inline PropagatorModel with_weights(const PropagatorModel& tmpl, const std::vector<grad::Tensor>& weights) {
  PropagatorModel m = tmpl;
  auto dst = m.net.weight_tensors();
  if (dst.size() != weights.size()) throw std::invalid_argument("with_weights: tensor count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->shape() != weights[i].shape()) throw std::invalid_argument("with_weights: tensor shape mismatch");
    *dst[i] = weights[i];
  }
  return m;
}

inline PredictionDistribution swag_sample_predict(const SwagStats& stats, const PropagatorModel& tmpl,
                                                  const Volume3D& volume, const prop::SliceAnnotation& ann,
                                                  std::size_t n_samples, double scale, std::uint64_t seed,
                                                  std::size_t jobs = 1, prop::PropagationRecord* record = nullptr) {
  if (stats.n_collected() < 2) throw std::invalid_argument("swag_sample_predict: stats need two or more snapshots");
  prop::PropagationRecord rec;
  auto samples = run_samples(n_samples, jobs, rec, [&](std::size_t i) {
    auto rng = grad::Rng::stream(seed, "swag_sample", i);
    return prop::propagate(with_weights(tmpl, stats.sample(rng, scale)), volume, ann);
  });
  if (record) *record = std::move(rec);
  return PredictionDistribution::from_samples(std::move(samples));
}

inline void check_artifacts(const UqArtifacts& a) {
  const auto& s = a.strategy;
  const std::size_t want = s.kind == UqKind::DeepEnsemble ? s.n_members : 1;
  if (a.models.size() != want) {
    throw std::invalid_argument("artifacts for " + to_string(s.kind) + " need " + std::to_string(want) +
                                " model(s), found " + std::to_string(a.models.size()));
  }
  for (const auto& m : a.models)
    if (m.kind != a.propagator) throw std::invalid_argument("artifact model kind differs from its propagator");
  const auto st = a.models.front().stochastic;
  if (s.kind == UqKind::BatchEnsemble && st.members != s.n_members) {
    throw std::invalid_argument("batch-ensemble model has " + std::to_string(st.members) + " members, strategy wants " +
                                std::to_string(s.n_members));
  }
  if (s.kind == UqKind::ConcreteDropout && !st.concrete) throw std::invalid_argument("model lacks concrete dropout");
  if (s.kind == UqKind::McDropout && st.dropout_rate != s.dropout_rate) {
    throw std::invalid_argument("model dropout rate differs from the strategy");
  }
  if (s.kind == UqKind::Swag && !a.swag) throw std::invalid_argument("swag artifacts lack fitted statistics");
}

// Mean soft mask over the strategy's samples, thresholded; uncertainty from the
// per-voxel variance.
inline UqPrediction predict_with_uq(const UqArtifacts& a, const Volume3D& volume, const prop::SliceAnnotation& ann,
                                    std::uint64_t seed, std::size_t jobs = 1) {
  check_artifacts(a);
  const auto& s = a.strategy;
  UqPrediction out;
  std::vector<SoftVolume> samples;
  switch (s.kind) {
    case UqKind::None: {
      auto r = prop::propagate(a.models.front(), volume, ann);
      out.record = std::move(r.record);
      samples.push_back(std::move(r.soft));
      break;
    }
    case UqKind::DeepEnsemble:
      samples = run_samples(a.models.size(), jobs, out.record,
                            [&](std::size_t i) { return prop::propagate(a.models[i], volume, ann); });
      break;
    case UqKind::BatchEnsemble:
      samples = run_samples(s.n_members, jobs, out.record,
                            [&](std::size_t i) { return prop::propagate(a.models.front(), volume, ann, {false, i}); });
      break;
    case UqKind::McDropout:
    case UqKind::ConcreteDropout:
      out.distribution = mc_dropout_sample(a.models.front(), volume, ann, s.n_samples, seed, jobs, &out.record);
      break;
    case UqKind::Swag:
      out.distribution = swag_sample_predict(*a.swag, a.models.front(), volume, ann, s.n_samples,
                                             s.swag.sample_scale, seed, jobs, &out.record);
      break;
  }
  if (!samples.empty()) out.distribution = PredictionDistribution::from_samples(std::move(samples));
  out.mask = threshold(out.distribution.mean);
  set_slice(out.mask, ann.slice_index, ann.mask);
  if (s.kind != UqKind::None) out.scores = uncertainty_scores(out.distribution.variance, out.mask);
  return out;
}

}  // namespace spuq::uq

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/sliceprop/edges.hpp"
#include "spuq/sliceprop/network.hpp"

namespace spuq::prop {

// Row-stochastic windowed affinity: for each target pixel p, weights over the
// (2R+1)^2 source pixels around p (row-major window order, dy outer).
struct AffinityMatrix {
  std::size_t source_slice = 0, target_slice = 0;
  std::size_t radius = 0;
  std::size_t height = 0, width = 0;
  Tensor weights;  // [H*W, (2R+1)^2]

  std::size_t window() const { return (2 * radius + 1) * (2 * radius + 1); }
};

// feat_src, feat_tgt: [C, H, W].
inline AffinityMatrix compute_affinity(const Tensor& feat_src, const Tensor& feat_tgt, std::size_t radius,
                                       double temperature) {
  if (feat_src.shape() != feat_tgt.shape() || feat_src.rank() != 3) {
    throw grad::ShapeError("compute_affinity: feature shapes " + grad::shape_str(feat_src.shape()) + " vs " +
                           grad::shape_str(feat_tgt.shape()));
  }
  if (radius < 1) throw std::invalid_argument("compute_affinity: radius must be >= 1");
  Tape tape;
  const double c = static_cast<double>(feat_src.dim(0));
  const auto logits = grad::window_logits(tape.constant(feat_src), tape.constant(feat_tgt), radius,
                                          static_cast<float>(1.0 / (temperature * std::sqrt(c))));
  AffinityMatrix a;
  a.radius = radius;
  a.height = feat_src.dim(1);
  a.width = feat_src.dim(2);
  a.weights = grad::softmax_rows(logits).value();
  return a;
}

inline Image2D warp_with_affinity(const AffinityMatrix& a, const Image2D& source) {
  if (source.height != a.height || source.width != a.width) {
    throw grad::ShapeError("warp_with_affinity: source " + std::to_string(source.height) + "x" +
                           std::to_string(source.width) + " vs affinity " + std::to_string(a.height) + "x" +
                           std::to_string(a.width));
  }
  const long h = static_cast<long>(a.height), w = static_cast<long>(a.width), r = static_cast<long>(a.radius);
  const long side = 2 * r + 1;
  Image2D out(a.height, a.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const float* row = a.weights.data() + (y * w + x) * side * side;
      double s = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        const long qy = y + dy;
        if (qy < 0 || qy >= h) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long qx = x + dx;
          if (qx < 0 || qx >= w) continue;
          s += static_cast<double>(row[(dy + r) * side + (dx + r)]) * source.data[qy * w + qx];
        }
      }
      out.data[y * w + x] = static_cast<float>(s);
    }
  return out;
}

struct VerifiedMask {
  Image2D mask;
  bool corrected = false;
  double cycle_dsc = 1.0;
};

inline double hard_dice(const Image2D& a, const Image2D& b) {
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.data[i] >= 0.5f, pb = b.data[i] >= 0.5f;
    na += pa;
    nb += pb;
    both += pa && pb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// Cycle-consistency check. The warped mask is carried back to the source
// slice with a_bwd; when the round trip's Dice against the source falls below
// threshold, target pixels that draw more than half their affinity mass from
// source pixels whose round-trip label disagrees are zeroed.
inline VerifiedMask verify_and_correct(const Image2D& source_mask, const Image2D& warped_mask,
                                       const AffinityMatrix& a_fwd, const AffinityMatrix& a_bwd, double threshold) {
  VerifiedMask v{warped_mask, false, 1.0};
  const Image2D back = warp_with_affinity(a_bwd, warped_mask);
  v.cycle_dsc = hard_dice(back, source_mask);
  if (!(v.cycle_dsc < threshold)) return v;
  Image2D disagree(source_mask.height, source_mask.width);
  for (std::size_t i = 0; i < disagree.size(); ++i) {
    disagree.data[i] = std::abs(back.data[i] - source_mask.data[i]) > 0.5f ? 1.0f : 0.0f;
  }
  const Image2D mass = warp_with_affinity(a_fwd, disagree);
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (mass.data[i] > 0.5f && v.mask.data[i] != 0.0f) {
      v.mask.data[i] = 0.0f;
      v.corrected = true;
    }
  }
  return v;
}

// ------------------------------------------------------------------ model

inline PropagatorModel make_affinity_model(const ArchConfig& arch, const StochasticConfig& st,
                                           const grad::InitSpec& init) {
  arch.validate();
  PropagatorModel m;
  m.kind = PropagatorKind::Affinity;
  m.arch = arch;
  m.stochastic = st;
  m.init = init;
  const std::size_t in = 1 + arch.edge_channels, hid = arch.hidden_channels;
  build_network(m, {Shape{hid, in, 3, 3}, Shape{hid, hid, 3, 3}, Shape{arch.feature_channels, hid, 3, 3}}, false);
  return m;
}

// Network input: intensity followed by the edge-profile channels.
inline Tensor affinity_input(const Image2D& slice, std::size_t edge_channels) {
  const Tensor edges = edge_profile(slice, edge_channels);
  Tensor x(Shape{1 + edge_channels, slice.height, slice.width});
  std::copy(slice.data.begin(), slice.data.end(), x.data());
  std::copy(edges.values().begin(), edges.values().end(), x.data() + slice.size());
  return x;
}

inline Var affinity_features(BoundNet& bn, const RunMode& mode, const Tensor& input) {
  Var x = bn.tape().constant(input);
  x = bn.activation(bn.conv(0, x, mode), mode);
  x = bn.activation(bn.conv(1, x, mode), mode);
  x = bn.conv(2, x, mode);
  const double g = bn.model().arch.feature_gain;
  return g == 1.0 ? x : grad::scale(x, static_cast<float>(g));
}

// Self-supervised reconstruction loss of one adjacent-slice pair.
inline Var affinity_pair_loss(BoundNet& bn, const RunMode& mode, const Image2D& src, const Image2D& tgt) {
  const auto& arch = bn.model().arch;
  Var fs = affinity_features(bn, mode, affinity_input(src, arch.edge_channels));
  Var ft = affinity_features(bn, mode, affinity_input(tgt, arch.edge_channels));
  const double c = static_cast<double>(arch.feature_channels);
  Var logits = grad::window_logits(fs, ft, arch.window_radius,
                                   static_cast<float>(1.0 / (arch.temperature * std::sqrt(c))));
  Var a = grad::softmax_rows(logits);
  Var recon = grad::warp_window(a, bn.tape().constant(src.tensor()), arch.window_radius);
  return grad::mse(recon, bn.tape().constant(tgt.tensor()));
}

inline void require_training_volumes(const std::vector<Volume3D>& volumes, std::size_t min_depth) {
  if (volumes.empty()) throw std::invalid_argument("training requires at least one volume");
  for (const auto& v : volumes) {
    if (v.depth() < min_depth) {
      throw std::invalid_argument("training volume depth " + std::to_string(v.depth()) + " below required " +
                                  std::to_string(min_depth));
    }
  }
}

inline SampleLoss affinity_sample_loss(const std::vector<Volume3D>& volumes) {
  return [&volumes](BoundNet& bn, const RunMode& mode, Rng& data) {
    const Volume3D& v = volumes[data.index(volumes.size())];
    const std::size_t z = data.index(v.depth() - 1);
    Image2D a = slice_image(v, z), b = slice_image(v, z + 1);
    if (data.uniform() < 0.5) std::swap(a, b);
    return affinity_pair_loss(bn, mode, a, b);
  };
}

// Trains `model` in place on adjacent slice pairs of the volumes.
inline void train_affinity_model(PropagatorModel& model, const std::vector<Volume3D>& volumes,
                                  const TrainSchedule& sched, const StepCallback& on_step = {}) {
  if (model.kind != PropagatorKind::Affinity) throw std::invalid_argument("train_affinity_model: not an affinity model");
  require_training_volumes(volumes, 2);
  train_network(model, sched, affinity_sample_loss(volumes), on_step);
}

inline PropagatorModel train_affinity_model(const std::vector<Volume3D>& volumes, const grad::SgdConfig& cfg,
                                            const ArchConfig& arch, std::uint64_t seed,
                                            const StochasticConfig& st = {}, grad::InitMode init = grad::InitMode::base) {
  PropagatorModel m = make_affinity_model(arch, st, {init, seed});
  train_affinity_model(m, volumes, {cfg, seed});
  return m;
}

// Per-slice features of a whole volume for one forward mode.
inline std::vector<Tensor> volume_features(const PropagatorModel& model, const Volume3D& v, const RunMode& mode) {
  std::vector<Tensor> feats;
  for (std::size_t z = 0; z < v.depth(); ++z) {
    Tape tape;
    BoundNet bn(tape, model, false);
    feats.push_back(affinity_features(bn, mode, affinity_input(slice_image(v, z), model.arch.edge_channels)).value());
  }
  return feats;
}

inline PropagationResult propagate_affinity(const PropagatorModel& model, const Volume3D& volume,
                                            const SliceAnnotation& ann, const RunMode& mode = {}) {
  if (model.kind != PropagatorKind::Affinity) throw std::invalid_argument("propagate_affinity: not an affinity model");
  validate_annotation(volume, ann);
  const auto& arch = model.arch;
  const auto feats = volume_features(model, volume, mode);
  PropagationResult res{SoftVolume::like(volume), MaskVolume::like(volume), make_record(volume, ann.slice_index)};
  set_slice(res.soft, ann.slice_index, ann.mask);

  auto run = [&](long step) {
    Image2D cur = ann.mask;
    for (long z = static_cast<long>(ann.slice_index) + step; z >= 0 && z < static_cast<long>(volume.depth());
         z += step) {
      const auto src = static_cast<std::size_t>(z - step), tgt = static_cast<std::size_t>(z);
      AffinityMatrix fwd = compute_affinity(feats[src], feats[tgt], arch.window_radius, arch.temperature);
      fwd.source_slice = src;
      fwd.target_slice = tgt;
      Image2D warped = warp_with_affinity(fwd, cur);
      if (arch.verify) {
        AffinityMatrix bwd = compute_affinity(feats[tgt], feats[src], arch.window_radius, arch.temperature);
        bwd.source_slice = tgt;
        bwd.target_slice = src;
        auto v = verify_and_correct(cur, warped, fwd, bwd, arch.verify_threshold);
        warped = std::move(v.mask);
        res.record.slices[tgt].corrected = v.corrected;
      }
      set_slice(res.soft, tgt, warped);
      cur = std::move(warped);
    }
  };
  run(+1);
  run(-1);
  res.mask = threshold(res.soft);
  // The annotation is reproduced exactly.
  set_slice(res.mask, ann.slice_index, ann.mask);
  return res;
}

}  // namespace spuq::prop

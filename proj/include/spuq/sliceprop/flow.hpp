#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/sliceprop/affinity.hpp"
#include "spuq/sliceprop/edges.hpp"
#include "spuq/sliceprop/network.hpp"
#include "spuq/sliceprop/refine.hpp"

namespace spuq::prop {

// Displacements in pixels, each field [2, H, W] holding (dx, dy).
// forward[d] carries slice d onto slice d+1 and lives on the grid of d+1;
// backward[d] carries slice d+1 onto slice d and lives on the grid of d.
struct DeformationFieldSet {
  std::size_t height = 0, width = 0, depth = 0;
  std::vector<Tensor> forward;
  std::vector<Tensor> backward;
};

// Bilinear sample of the image at p + phi(p), coordinates clamped to the border.
inline Image2D apply_ddf(const Tensor& field, const Image2D& image) {
  if (field.shape() != Shape{2, image.height, image.width}) {
    throw grad::ShapeError("apply_ddf: field " + grad::shape_str(field.shape()) + " vs image " +
                           std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const std::size_t h = image.height, w = image.width, hw = h * w;
  Image2D out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double sx = std::clamp(static_cast<double>(x) + field[p], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(static_cast<double>(y) + field[hw + p], 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
      const double v = (1 - ay) * ((1 - ax) * image.data[y0 * w + x0] + ax * image.data[y0 * w + x1]) +
                       ay * ((1 - ax) * image.data[y1 * w + x0] + ax * image.data[y1 * w + x1]);
      out.data[p] = static_cast<float>(v);
    }
  return out;
}

// lambda (1 - SSIM(pred, target)) + (1 - lambda) mean(C(target) |pred - target|),
// C being the max-normalized Sobel magnitude of the target.
inline Var boundary_loss(const Var& pred, const Image2D& target, double lambda, std::size_t window = 7,
                         double c1 = 1e-4, double c2 = 9e-4) {
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("boundary_loss: lambda must lie in [0, 1]");
  Tape& tape = *pred.tape;
  const Var tgt = tape.constant(target.tensor());
  const Var s = grad::ssim(pred, tgt, window, c1, c2);
  Var loss = grad::add(grad::scale(s, static_cast<float>(-lambda)),
                       tape.constant(Tensor::scalar(static_cast<float>(lambda))));
  if (lambda < 1.0) {
    loss = grad::add(loss, grad::scale(grad::weighted_l1(pred, tgt, edge_weight_map(target)),
                                       static_cast<float>(1.0 - lambda)));
  }
  return loss;
}

// ------------------------------------------------------------------ model

inline PropagatorModel make_flow_model(const ArchConfig& arch, const StochasticConfig& st, const grad::InitSpec& init) {
  arch.validate();
  PropagatorModel m;
  m.kind = PropagatorKind::Flow;
  m.arch = arch;
  m.stochastic = st;
  m.init = init;
  const std::size_t c1 = arch.flow_channels1, c2 = arch.flow_channels2;
  build_network(m,
                {Shape{c1, 1, 3, 3, 3}, Shape{c2, c1, 3, 3, 3}, Shape{c1, c2 + c1, 3, 3, 3}, Shape{4, c1, 3, 3, 3}},
                true);
  return m;
}

// Zero mean, unit variance; a constant input maps to zeros.
inline Tensor standardize(Tensor t) {
  double mean = 0.0, sq = 0.0;
  for (float v : t.values()) mean += v;
  mean /= static_cast<double>(t.size());
  for (float v : t.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(t.size()));
  for (float& v : t.values()) v = sd > 1e-12 ? static_cast<float>((v - mean) / sd) : 0.0f;
  return t;
}

// Two-level encoder-decoder over [1, D, H, W]; returns [4, D, H, W].
inline Var flow_forward(BoundNet& bn, const RunMode& mode, const Tensor& input) {
  if (input.rank() != 4 || input.dim(2) % 2 != 0 || input.dim(3) % 2 != 0) {
    throw grad::ShapeError("flow network expects [1, D, H, W] with even H and W, got " +
                           grad::shape_str(input.shape()));
  }
  Var x = bn.tape().constant(bn.model().arch.flow_standardize ? standardize(input) : input);
  Var e1 = bn.activation(bn.conv(0, x, mode), mode);
  Var e2 = bn.activation(bn.conv(1, grad::avgpool2_inplane(e1), mode), mode);
  Var merged = grad::concat_channels(grad::upsample2_inplane(e2), e1);
  Var d1 = bn.activation(bn.conv(2, merged, mode), mode);
  Var out = bn.conv(3, d1, mode);
  const double g = bn.model().arch.flow_gain;
  return g == 1.0 ? out : grad::scale(out, static_cast<float>(g));
}

inline Tensor volume_tensor(const Volume3D& v, std::size_t z0, std::size_t z1) {
  Tensor t(Shape{1, z1 - z0, v.height(), v.width()});
  std::copy(v.values().begin() + static_cast<std::ptrdiff_t>(z0 * v.slice_size()),
            v.values().begin() + static_cast<std::ptrdiff_t>(z1 * v.slice_size()), t.data());
  return t;
}

inline DeformationFieldSet predict_ddf(const PropagatorModel& model, const Volume3D& volume, const RunMode& mode = {}) {
  if (model.kind != PropagatorKind::Flow) throw std::invalid_argument("predict_ddf: not a flow model");
  if (volume.depth() < 2) throw std::invalid_argument("predict_ddf: volume depth must be >= 2");
  Tape tape;
  BoundNet bn(tape, model, false);
  const Tensor out = flow_forward(bn, mode, volume_tensor(volume, 0, volume.depth())).value();
  DeformationFieldSet f;
  f.height = volume.height();
  f.width = volume.width();
  f.depth = volume.depth();
  const std::size_t hw = f.height * f.width, d = f.depth;
  auto plane = [&](std::size_t c0, std::size_t z) {
    Tensor t(Shape{2, f.height, f.width});
    for (std::size_t c = 0; c < 2; ++c) {
      const float* src = out.data() + ((c0 + c) * d + z) * hw;
      std::copy(src, src + hw, t.data() + c * hw);
    }
    return t;
  };
  for (std::size_t z = 0; z + 1 < d; ++z) {
    f.forward.push_back(plane(0, z + 1));
    f.backward.push_back(plane(2, z));
  }
  return f;
}

// Summed boundary loss of the 2k neighbours reconstructed from slice d by
// composing k forward and k backward fields.
inline Var flow_window_loss(BoundNet& bn, const RunMode& mode, const Volume3D& v, std::size_t d) {
  const auto& arch = bn.model().arch;
  const std::size_t k = arch.neighborhood;
  const std::size_t lo = d >= k + arch.crop_margin ? d - k - arch.crop_margin : 0;
  const std::size_t hi = std::min(v.depth(), d + k + arch.crop_margin + 1);
  const Var out = flow_forward(bn, mode, volume_tensor(v, lo, hi));
  const std::size_t local = d - lo;
  Tape& tape = bn.tape();
  const Var src = tape.constant(slice_image(v, d).tensor());
  std::optional<Var> loss;
  auto add = [&](const Var& l) { loss = loss ? grad::add(*loss, l) : l; };
  Var cur = src;
  for (std::size_t j = 1; j <= k; ++j) {
    cur = grad::grid_sample_2d(cur, grad::take_planes(out, 0, 2, local + j));
    add(boundary_loss(cur, slice_image(v, d + j), arch.lambda, arch.ssim_window, arch.ssim_c1, arch.ssim_c2));
  }
  cur = src;
  for (std::size_t j = 1; j <= k; ++j) {
    cur = grad::grid_sample_2d(cur, grad::take_planes(out, 2, 2, local - j));
    add(boundary_loss(cur, slice_image(v, d - j), arch.lambda, arch.ssim_window, arch.ssim_c1, arch.ssim_c2));
  }
  return *loss;
}

inline SampleLoss flow_sample_loss(const std::vector<Volume3D>& volumes) {
  return [&volumes](BoundNet& bn, const RunMode& mode, Rng& data) {
    const std::size_t k = bn.model().arch.neighborhood;
    const Volume3D& v = volumes[data.index(volumes.size())];
    const std::size_t d = k + data.index(v.depth() - 2 * k);
    return flow_window_loss(bn, mode, v, d);
  };
}

inline void train_flow_model(PropagatorModel& model, const std::vector<Volume3D>& volumes, const TrainSchedule& sched,
                             const StepCallback& on_step = {}) {
  if (model.kind != PropagatorKind::Flow) throw std::invalid_argument("train_flow_model: not a flow model");
  require_training_volumes(volumes, 2 * model.arch.neighborhood + 1);
  train_network(model, sched, flow_sample_loss(volumes), on_step);
}

inline PropagatorModel train_flow_model(const std::vector<Volume3D>& volumes, const grad::SgdConfig& cfg,
                                        const ArchConfig& arch, std::uint64_t seed, const StochasticConfig& st = {},
                                        grad::InitMode init = grad::InitMode::base) {
  PropagatorModel m = make_flow_model(arch, st, {init, seed});
  train_flow_model(m, volumes, {cfg, seed});
  return m;
}

inline RefineOptions refine_options(const ArchConfig& arch) {
  RefineOptions o;
  o.gamma = arch.refine_gamma;
  o.n_support = arch.refine_support;
  o.ridge = arch.refine_ridge;
  return o;
}

inline PropagationResult propagate_flow(const PropagatorModel& model, const Volume3D& volume,
                                        const SliceAnnotation& ann, const RunMode& mode = {}) {
  if (model.kind != PropagatorKind::Flow) throw std::invalid_argument("propagate_flow: not a flow model");
  validate_annotation(volume, ann);
  const auto fields = predict_ddf(model, volume, mode);
  PropagationResult res{SoftVolume::like(volume), MaskVolume::like(volume), make_record(volume, ann.slice_index)};
  set_slice(res.soft, ann.slice_index, ann.mask);
  const auto ropt = refine_options(model.arch);

  auto run = [&](long step) {
    Image2D cur = ann.mask;
    for (long z = static_cast<long>(ann.slice_index) + step; z >= 0 && z < static_cast<long>(volume.depth());
         z += step) {
      const auto tgt = static_cast<std::size_t>(z);
      const Tensor& phi = step > 0 ? fields.forward[tgt - 1] : fields.backward[tgt];
      Image2D warped = apply_ddf(phi, cur);
      if (model.arch.refine) {
        const auto r = refine_mask_kernel(warped, slice_image(volume, tgt), ropt, tgt);
        // Confident pixels keep their soft value; the ambiguous band takes the refined label.
        for (std::size_t i = 0; i < warped.size(); ++i) {
          const float v = warped.data[i];
          if (v > ropt.confident_bg && v < ropt.confident_fg) warped.data[i] = r.mask.data[i];
        }
      }
      set_slice(res.soft, tgt, warped);
      cur = std::move(warped);
    }
  };
  run(+1);
  run(-1);
  res.mask = threshold(res.soft);
  set_slice(res.mask, ann.slice_index, ann.mask);
  return res;
}

// Dispatch on the model kind.
inline PropagationResult propagate(const PropagatorModel& model, const Volume3D& volume, const SliceAnnotation& ann,
                                   const RunMode& mode = {}) {
  return model.kind == PropagatorKind::Affinity ? propagate_affinity(model, volume, ann, mode)
                                                : propagate_flow(model, volume, ann, mode);
}

inline void train_model(PropagatorModel& model, const std::vector<Volume3D>& volumes, const TrainSchedule& sched,
                        const StepCallback& on_step = {}) {
  if (model.kind == PropagatorKind::Affinity)
    train_affinity_model(model, volumes, sched, on_step);
  else
    train_flow_model(model, volumes, sched, on_step);
}

inline PropagatorModel make_model(PropagatorKind kind, const ArchConfig& arch, const StochasticConfig& st,
                                  const grad::InitSpec& init) {
  return kind == PropagatorKind::Affinity ? make_affinity_model(arch, st, init) : make_flow_model(arch, st, init);
}

}  // namespace spuq::prop

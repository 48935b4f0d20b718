#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "spuq/gradcore.hpp"

namespace spuq::uq {

// Dense layer shared by all members; member i uses W_i = r_i s_i^T (Hadamard) W.
// Input rows are samples: x [N, in] -> y [N, out].
struct BatchEnsembleLayer {
  grad::Tensor weight;  // [out, in]
  grad::Tensor bias;    // [out]
  std::vector<grad::Tensor> r;  // [out] per member
  std::vector<grad::Tensor> s;  // [in] per member

  std::size_t members() const { return r.size(); }

  static BatchEnsembleLayer with_unit_factors(grad::Tensor weight, grad::Tensor bias, std::size_t members) {
    BatchEnsembleLayer l{std::move(weight), std::move(bias), {}, {}};
    for (std::size_t i = 0; i < members; ++i) {
      l.r.emplace_back(grad::Shape{l.weight.dim(0)}, 1.0f);
      l.s.emplace_back(grad::Shape{l.weight.dim(1)}, 1.0f);
    }
    return l;
  }

  // Explicit r_i s_i^T o W, for checking.
  grad::Tensor materialize(std::size_t i) const {
    check_member(i);
    grad::Tensor w = weight;
    const std::size_t out = weight.dim(0), in = weight.dim(1);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t k = 0; k < in; ++k) w[o * in + k] *= r[i][o] * s[i][k];
    return w;
  }

  void check_member(std::size_t i) const {
    if (i >= members()) {
      throw std::out_of_range("batch-ensemble member " + std::to_string(i) + " out of range (" +
                              std::to_string(members()) + " members)");
    }
  }
};

// r_i o (W (s_i o x) + b), without forming W_i. The bias is scaled with the
// output, matching the convolutional layers.
inline grad::Var batch_ensemble_forward(const BatchEnsembleLayer& layer, const grad::Var& x, std::size_t member) {
  layer.check_member(member);
  grad::Tape& tape = *x.tape;
  const std::size_t n = x.shape()[0], in = layer.weight.dim(1), out = layer.weight.dim(0);
  if (x.shape() != grad::Shape{n, in}) throw grad::ShapeError("batch_ensemble_forward: input must be [N, in]");
  auto tile = [&](const grad::Tensor& v, std::size_t width) {
    grad::Tensor t(grad::Shape{n, width});
    for (std::size_t row = 0; row < n; ++row)
      for (std::size_t c = 0; c < width; ++c) t[row * width + c] = v[c];
    return tape.constant(t);
  };
  grad::Tensor wt(grad::Shape{in, out});
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = layer.weight[o * in + k];
  const grad::Var scaled = grad::mul(x, tile(layer.s[member], in));
  const grad::Var y = grad::add(grad::matmul(scaled, tape.constant(wt)), tile(layer.bias, out));
  return grad::mul(y, tile(layer.r[member], out));
}

}  // namespace spuq::uq

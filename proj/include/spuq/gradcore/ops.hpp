#pragma once

// Differentiable primitives. Every op records its output on the tape of its
// first argument; backward closures reference parents by id.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spuq/gradcore/rng.hpp"
#include "spuq/gradcore/tape.hpp"
#include "spuq/gradcore/tensor.hpp"

namespace spuq::grad {

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_same_tape(const char* op, const Var& a, const Var& b) {
  require(a.tape == b.tape, op, "operands recorded on different tapes");
}

inline void accumulate(Tape& t, const Var& v, const Tensor& g) {
  if (!v.requires_grad()) return;
  Tensor& buf = t.grad_buffer(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Same-padded stride-1 cross-correlation over a [C, D, H, W] volume.
struct ConvGeom {
  std::size_t cin, cout, d, h, w, kd, kh, kw;
  std::size_t plane() const { return d * h * w; }
};

inline void conv_forward(const ConvGeom& g, const float* in, const float* wt, const float* bias,
                         float* out) {
  const std::size_t n = g.plane();
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2),
             pw = static_cast<long>(g.kw / 2);
  std::vector<double> acc(n);
  for (std::size_t co = 0; co < g.cout; ++co) {
    std::fill(acc.begin(), acc.end(), bias ? static_cast<double>(bias[co]) : 0.0);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const float* src = in + ci * n;
      for (std::size_t a = 0; a < g.kd; ++a) {
        const long dz = static_cast<long>(a) - pd;
        for (std::size_t b = 0; b < g.kh; ++b) {
          const long dy = static_cast<long>(b) - ph;
          for (std::size_t c = 0; c < g.kw; ++c) {
            const long dx = static_cast<long>(c) - pw;
            const double wv = wt[(((co * g.cin + ci) * g.kd + a) * g.kh + b) * g.kw + c];
            if (wv == 0.0) continue;
            const long z0 = std::max(0L, -dz), z1 = std::min<long>(g.d, g.d - dz);
            const long y0 = std::max(0L, -dy), y1 = std::min<long>(g.h, g.h - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(g.w, g.w - dx);
            for (long z = z0; z < z1; ++z) {
              for (long y = y0; y < y1; ++y) {
                double* o = acc.data() + (z * g.h + y) * g.w;
                const float* s = src + ((z + dz) * g.h + (y + dy)) * g.w + dx;
                for (long x = x0; x < x1; ++x) o[x] += wv * static_cast<double>(s[x]);
              }
            }
          }
        }
      }
    }
    float* dst = out + co * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(acc[i]);
  }
}

inline void conv_backward(const ConvGeom& g, const float* in, const float* wt, const float* gout,
                          float* gin, float* gw, float* gb) {
  const std::size_t n = g.plane();
  const long pd = static_cast<long>(g.kd / 2), ph = static_cast<long>(g.kh / 2),
             pw = static_cast<long>(g.kw / 2);
  std::vector<double> gin_acc(gin ? g.cin * n : 0, 0.0);
  for (std::size_t co = 0; co < g.cout; ++co) {
    const float* go = gout + co * n;
    if (gb) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += go[i];
      gb[co] += static_cast<float>(s);
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const float* src = in + ci * n;
      double* gi = gin ? gin_acc.data() + ci * n : nullptr;
      for (std::size_t a = 0; a < g.kd; ++a) {
        const long dz = static_cast<long>(a) - pd;
        for (std::size_t b = 0; b < g.kh; ++b) {
          const long dy = static_cast<long>(b) - ph;
          for (std::size_t c = 0; c < g.kw; ++c) {
            const long dx = static_cast<long>(c) - pw;
            const std::size_t widx = (((co * g.cin + ci) * g.kd + a) * g.kh + b) * g.kw + c;
            const double wv = wt[widx];
            const long z0 = std::max(0L, -dz), z1 = std::min<long>(g.d, g.d - dz);
            const long y0 = std::max(0L, -dy), y1 = std::min<long>(g.h, g.h - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(g.w, g.w - dx);
            double dw = 0.0;
            for (long z = z0; z < z1; ++z) {
              for (long y = y0; y < y1; ++y) {
                const float* o = go + (z * g.h + y) * g.w;
                const long off = ((z + dz) * g.h + (y + dy)) * g.w + dx;
                const float* s = src + off;
                if (gw) {
                  for (long x = x0; x < x1; ++x) dw += static_cast<double>(o[x]) * s[x];
                }
                if (gi && wv != 0.0) {
                  double* t = gi + off;
                  for (long x = x0; x < x1; ++x) t[x] += wv * static_cast<double>(o[x]);
                }
              }
            }
            if (gw) gw[widx] += static_cast<float>(dw);
          }
        }
      }
    }
  }
  if (gin) {
    for (std::size_t i = 0; i < gin_acc.size(); ++i) gin[i] += static_cast<float>(gin_acc[i]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape("add", a, b);
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b](Tape& t, const Tensor& g) {
                          detail::accumulate(t, a, g);
                          detail::accumulate(t, b, g);
                        });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_tape("sub", a, b);
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b](Tape& t, const Tensor& g) {
                          detail::accumulate(t, a, g);
                          if (b.requires_grad()) {
                            Tensor& gb = t.grad_buffer(b.id);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          }
                        });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape("mul", a, b);
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b](Tape& t, const Tensor& g) {
                          const Tensor& av = a.value();
                          const Tensor& bv = b.value();
                          if (a.requires_grad()) {
                            Tensor& ga = t.grad_buffer(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                          }
                          if (b.requires_grad()) {
                            Tensor& gb = t.grad_buffer(b.id);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                          }
                        });
}

inline Var scale(const Var& a, float c) {
  Tensor out = a.value();
  for (float& v : out.values()) v *= c;
  return a.tape->record("scale", std::move(out), a.requires_grad(), [a, c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), a.requires_grad(),
                        [a](Tape& t, const Tensor& g) { detail::accumulate(t, a, g); });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return a.tape->record("relu", std::move(out), a.requires_grad(), [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0f) ga[i] += g[i];
    }
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (float& v : out.values()) v = static_cast<float>(detail::sigmoid(v));
  const std::size_t self = a.tape->size();
  return a.tape->record("sigmoid", std::move(out), a.requires_grad(),
                        [a, self](Tape& t, const Tensor& g) {
                          const Tensor& y = t.value(self);
                          Tensor& ga = t.grad_buffer(a.id);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
                        });
}

// ------------------------------------------------------------------ reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (float v : a.value().values()) s += v;
  return a.tape->record("sum", Tensor::scalar(static_cast<float>(s)), a.requires_grad(),
                        [a](Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_buffer(a.id);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                        });
}

inline Var mean(const Var& a) {
  detail::require(a.size() > 0, "mean", "empty input");
  return scale(sum(a), 1.0f / static_cast<float>(a.size()));
}

inline Var sum_squares(const Var& a) {
  double s = 0.0;
  for (float v : a.value().values()) s += static_cast<double>(v) * v;
  return a.tape->record("sum_squares", Tensor::scalar(static_cast<float>(s)), a.requires_grad(),
                        [a](Tape& t, const Tensor& g) {
                          const Tensor& av = a.value();
                          Tensor& ga = t.grad_buffer(a.id);
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0f * g[0] * av[i];
                        });
}

inline Var mse(const Var& a, const Var& b) {
  detail::require_same_tape("mse", a, b);
  detail::require_same_shape("mse", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    s += d * d;
  }
  const double n = static_cast<double>(av.size());
  return a.tape->record("mse", Tensor::scalar(static_cast<float>(s / n)),
                        a.requires_grad() || b.requires_grad(), [a, b, n](Tape& t, const Tensor& g) {
                          const Tensor& av = a.value();
                          const Tensor& bv = b.value();
                          const double k = 2.0 * g[0] / n;
                          if (a.requires_grad()) {
                            Tensor& ga = t.grad_buffer(a.id);
                            for (std::size_t i = 0; i < av.size(); ++i)
                              ga[i] += static_cast<float>(k * (static_cast<double>(av[i]) - bv[i]));
                          }
                          if (b.requires_grad()) {
                            Tensor& gb = t.grad_buffer(b.id);
                            for (std::size_t i = 0; i < av.size(); ++i)
                              gb[i] -= static_cast<float>(k * (static_cast<double>(av[i]) - bv[i]));
                          }
                        });
}

// (1/N) * sum_i w_i |a_i - b_i|, with w treated as a constant map.
inline Var weighted_l1(const Var& a, const Var& b, const Tensor& weight) {
  detail::require_same_tape("weighted_l1", a, b);
  detail::require_same_shape("weighted_l1", a, b);
  detail::require(weight.shape() == a.shape(), "weighted_l1",
                  "weight shape " + shape_str(weight.shape()) + " vs " + shape_str(a.shape()));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += weight[i] * std::abs(static_cast<double>(av[i]) - bv[i]);
  const double n = static_cast<double>(av.size());
  return a.tape->record("weighted_l1", Tensor::scalar(static_cast<float>(s / n)),
                        a.requires_grad() || b.requires_grad(),
                        [a, b, weight, n](Tape& t, const Tensor& g) {
                          const Tensor& av = a.value();
                          const Tensor& bv = b.value();
                          for (int side = 0; side < 2; ++side) {
                            const Var& v = side == 0 ? a : b;
                            if (!v.requires_grad()) continue;
                            Tensor& gv = t.grad_buffer(v.id);
                            const double sgn_side = side == 0 ? 1.0 : -1.0;
                            for (std::size_t i = 0; i < av.size(); ++i) {
                              const float d = av[i] - bv[i];
                              const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                              gv[i] += static_cast<float>(sgn_side * g[0] * weight[i] * sg / n);
                            }
                          }
                        });
}

// ---------------------------------------------------------------- linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape("matmul", a, b);
  detail::require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
                  "matmul", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(Shape{m, n});
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) row[j] += x * bv[p * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(row[j]);
  }
  return a.tape->record("matmul", std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b, m, k, n](Tape& t, const Tensor& g) {
                          const Tensor& av = a.value();
                          const Tensor& bv = b.value();
                          if (a.requires_grad()) {
                            Tensor& ga = t.grad_buffer(a.id);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[i * n + j]) * bv[p * n + j];
                                ga[i * k + p] += static_cast<float>(s);
                              }
                          }
                          if (b.requires_grad()) {
                            Tensor& gb = t.grad_buffer(b.id);
                            for (std::size_t p = 0; p < k; ++p)
                              for (std::size_t j = 0; j < n; ++j) {
                                double s = 0.0;
                                for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(av[i * k + p]) * g[i * n + j];
                                gb[p * n + j] += static_cast<float>(s);
                              }
                          }
                        });
}

// Row-wise softmax of a [rows, cols] tensor.
inline Var softmax_rows(const Var& a) {
  detail::require(a.shape().size() == 2, "softmax_rows", "expects rank 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    float* x = out.data() + r * cols;
    const float mx = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(x[c]) - mx);
    for (std::size_t c = 0; c < cols; ++c) x[c] = static_cast<float>(std::exp(static_cast<double>(x[c]) - mx) / s);
  }
  const std::size_t self = a.tape->size();
  return a.tape->record("softmax_rows", std::move(out), a.requires_grad(),
                        [a, self, rows, cols](Tape& t, const Tensor& g) {
                          const Tensor& y = t.value(self);
                          Tensor& ga = t.grad_buffer(a.id);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t o = r * cols;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[o + c]) * y[o + c];
                            for (std::size_t c = 0; c < cols; ++c)
                              ga[o + c] += static_cast<float>(y[o + c] * (g[o + c] - dot));
                          }
                        });
}

// ------------------------------------------------------------------ convolution

// x: [Cin, D, H, W], w: [Cout, Cin, kd, kh, kw], b: [Cout]. Stride 1, zero
// padding that preserves spatial size (odd kernels).
inline Var conv3d(const Var& x, const Var& w, const Var& b) {
  detail::require_same_tape("conv3d", x, w);
  detail::require_same_tape("conv3d", x, b);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::require(xs.size() == 4 && ws.size() == 5 && ws[1] == xs[0] && b.shape() == Shape{ws[0]} &&
                      ws[2] % 2 == 1 && ws[3] % 2 == 1 && ws[4] % 2 == 1,
                  "conv3d",
                  "incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) + " b" + shape_str(b.shape()));
  const detail::ConvGeom geom{xs[0], ws[0], xs[1], xs[2], xs[3], ws[2], ws[3], ws[4]};
  Tensor out(Shape{geom.cout, geom.d, geom.h, geom.w});
  detail::conv_forward(geom, x.value().data(), w.value().data(), b.value().data(), out.data());
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return x.tape->record("conv3d", std::move(out), rg, [x, w, b, geom](Tape& t, const Tensor& g) {
    float* gin = x.requires_grad() ? t.grad_buffer(x.id).data() : nullptr;
    float* gw = w.requires_grad() ? t.grad_buffer(w.id).data() : nullptr;
    float* gb = b.requires_grad() ? t.grad_buffer(b.id).data() : nullptr;
    detail::conv_backward(geom, x.value().data(), w.value().data(), g.data(), gin, gw, gb);
  });
}

// x: [Cin, H, W], w: [Cout, Cin, kh, kw], b: [Cout].
inline Var conv2d(const Var& x, const Var& w, const Var& b) {
  detail::require_same_tape("conv2d", x, w);
  detail::require_same_tape("conv2d", x, b);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::require(xs.size() == 3 && ws.size() == 4 && ws[1] == xs[0] && b.shape() == Shape{ws[0]} &&
                      ws[2] % 2 == 1 && ws[3] % 2 == 1,
                  "conv2d",
                  "incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws) + " b" + shape_str(b.shape()));
  const detail::ConvGeom geom{xs[0], ws[0], 1, xs[1], xs[2], 1, ws[2], ws[3]};
  Tensor out(Shape{geom.cout, geom.h, geom.w});
  detail::conv_forward(geom, x.value().data(), w.value().data(), b.value().data(), out.data());
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  return x.tape->record("conv2d", std::move(out), rg, [x, w, b, geom](Tape& t, const Tensor& g) {
    float* gin = x.requires_grad() ? t.grad_buffer(x.id).data() : nullptr;
    float* gw = w.requires_grad() ? t.grad_buffer(w.id).data() : nullptr;
    float* gb = b.requires_grad() ? t.grad_buffer(b.id).data() : nullptr;
    detail::conv_backward(geom, x.value().data(), w.value().data(), g.data(), gin, gw, gb);
  });
}

// ---------------------------------------------------------------- channel ops

// y[c, ...] = x[c, ...] * v[c]
inline Var scale_channels(const Var& x, const Var& v) {
  detail::require_same_tape("scale_channels", x, v);
  const std::size_t c = x.shape().at(0);
  detail::require(v.size() == c, "scale_channels",
                  "factor shape " + shape_str(v.shape()) + " vs input " + shape_str(x.shape()));
  const std::size_t n = x.size() / c;
  Tensor out = x.value();
  const Tensor& vv = v.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] *= vv[ch];
  return x.tape->record("scale_channels", std::move(out), x.requires_grad() || v.requires_grad(),
                        [x, v, c, n](Tape& t, const Tensor& g) {
                          const Tensor& xv = x.value();
                          const Tensor& vv = v.value();
                          if (x.requires_grad()) {
                            Tensor& gx = t.grad_buffer(x.id);
                            for (std::size_t ch = 0; ch < c; ++ch)
                              for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += g[ch * n + i] * vv[ch];
                          }
                          if (v.requires_grad()) {
                            Tensor& gv = t.grad_buffer(v.id);
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              double s = 0.0;
                              for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(g[ch * n + i]) * xv[ch * n + i];
                              gv[ch] += static_cast<float>(s);
                            }
                          }
                        });
}

inline Var concat_channels(const Var& a, const Var& b) {
  detail::require_same_tape("concat_channels", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require(as.size() == bs.size() && as.size() >= 2 && std::equal(as.begin() + 1, as.end(), bs.begin() + 1),
                  "concat_channels", "incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  Shape os = as;
  os[0] = as[0] + bs[0];
  Tensor out(os);
  std::copy(a.value().values().begin(), a.value().values().end(), out.data());
  std::copy(b.value().values().begin(), b.value().values().end(), out.data() + a.size());
  const std::size_t na = a.size();
  return a.tape->record("concat_channels", std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b, na](Tape& t, const Tensor& g) {
                          if (a.requires_grad()) {
                            Tensor& ga = t.grad_buffer(a.id);
                            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                          }
                          if (b.requires_grad()) {
                            Tensor& gb = t.grad_buffer(b.id);
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                          }
                        });
}

// Channels [c0, c0 + count) at depth z of a [C, D, H, W] tensor -> [count, H, W].
inline Var take_planes(const Var& x, std::size_t c0, std::size_t count, std::size_t z) {
  const Shape& s = x.shape();
  detail::require(s.size() == 4 && c0 + count <= s[0] && z < s[1], "take_planes",
                  "range out of bounds for " + shape_str(s));
  const std::size_t d = s[1], hw = s[2] * s[3];
  Tensor out(Shape{count, s[2], s[3]});
  for (std::size_t c = 0; c < count; ++c) {
    const float* src = x.value().data() + ((c0 + c) * d + z) * hw;
    std::copy(src, src + hw, out.data() + c * hw);
  }
  return x.tape->record("take_planes", std::move(out), x.requires_grad(),
                        [x, c0, count, z, d, hw](Tape& t, const Tensor& g) {
                          Tensor& gx = t.grad_buffer(x.id);
                          for (std::size_t c = 0; c < count; ++c) {
                            float* dst = gx.data() + ((c0 + c) * d + z) * hw;
                            for (std::size_t i = 0; i < hw; ++i) dst[i] += g[c * hw + i];
                          }
                        });
}

// 2x2 in-plane average pooling of [C, D, H, W] (H, W even).
inline Var avgpool2_inplane(const Var& x) {
  const Shape& s = x.shape();
  detail::require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avgpool2_inplane",
                  "expects [C,D,H,W] with even H, W, got " + shape_str(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor out(Shape{s[0], s[1], oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const float* r0 = xv.data() + (p * h + 2 * y) * w + 2 * xx;
        const float* r1 = r0 + w;
        out[(p * oh + y) * ow + xx] = 0.25f * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  return x.tape->record("avgpool2_inplane", std::move(out), x.requires_grad(),
                        [x, planes, h, w, oh, ow](Tape& t, const Tensor& g) {
                          Tensor& gx = t.grad_buffer(x.id);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t y = 0; y < oh; ++y)
                              for (std::size_t xx = 0; xx < ow; ++xx) {
                                const float v = 0.25f * g[(p * oh + y) * ow + xx];
                                float* r0 = gx.data() + (p * h + 2 * y) * w + 2 * xx;
                                r0[0] += v;
                                r0[1] += v;
                                r0[w] += v;
                                r0[w + 1] += v;
                              }
                        });
}

// Nearest-neighbour 2x in-plane upsampling of [C, D, H, W].
inline Var upsample2_inplane(const Var& x) {
  const Shape& s = x.shape();
  detail::require(s.size() == 4, "upsample2_inplane", "expects [C,D,H,W], got " + shape_str(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
  Tensor out(Shape{s[0], s[1], oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / 2) * w + xx / 2];
  return x.tape->record("upsample2_inplane", std::move(out), x.requires_grad(),
                        [x, planes, h, w, oh, ow](Tape& t, const Tensor& g) {
                          Tensor& gx = t.grad_buffer(x.id);
                          for (std::size_t p = 0; p < planes; ++p)
                            for (std::size_t y = 0; y < oh; ++y)
                              for (std::size_t xx = 0; xx < ow; ++xx)
                                gx[(p * h + y / 2) * w + xx / 2] += g[(p * oh + y) * ow + xx];
                        });
}

// ---------------------------------------------------------------- stochastic

// Inverted dropout: kept entries are scaled by 1 / (1 - rate).
inline Var dropout(const Var& x, double rate, Rng& rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout", "rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const float keep_scale = static_cast<float>(1.0 / (1.0 - rate));
  Tensor mask(x.shape());
  for (float& m : mask.values()) m = rng.uniform() >= rate ? keep_scale : 0.0f;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record("dropout", std::move(out), x.requires_grad(),
                        [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
                          Tensor& gx = t.grad_buffer(x.id);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                        });
}

// Relaxed per-channel (spatial) dropout gate. With p = sigmoid(logit_p), each
// channel c draws u ~ U(0,1) and a relaxed drop indicator
//   z_c = sigmoid((logit_p + log u - log(1 - u)) / t),
// and the output is x * (1 - z_c) / (1 - p).
inline Var concrete_gate(const Var& x, const Var& logit_p, double temperature, Rng& rng) {
  detail::require_same_tape("concrete_gate", x, logit_p);
  detail::require(logit_p.size() == 1, "concrete_gate", "logit_p must be scalar");
  detail::require(temperature > 0.0, "concrete_gate", "temperature must be positive");
  const std::size_t c = x.shape().at(0);
  const std::size_t n = x.size() / c;
  const double lp = logit_p.value()[0];
  const double p = detail::sigmoid(lp);
  std::vector<double> z(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double u = std::clamp(rng.uniform_open(), 1e-7, 1.0 - 1e-7);
    z[ch] = detail::sigmoid((lp + std::log(u) - std::log1p(-u)) / temperature);
  }
  Tensor out = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float k = static_cast<float>((1.0 - z[ch]) / (1.0 - p));
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] *= k;
  }
  return x.tape->record(
      "concrete_gate", std::move(out), x.requires_grad() || logit_p.requires_grad(),
      [x, logit_p, z = std::move(z), p, temperature, c, n](Tape& t, const Tensor& g) {
        const Tensor& xv = x.value();
        if (x.requires_grad()) {
          Tensor& gx = t.grad_buffer(x.id);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const float k = static_cast<float>((1.0 - z[ch]) / (1.0 - p));
            for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += g[ch * n + i] * k;
          }
        }
        if (logit_p.requires_grad()) {
          double s = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double dk = -z[ch] * (1.0 - z[ch]) / (temperature * (1.0 - p)) + (1.0 - z[ch]) * p / (1.0 - p);
            double gx = 0.0;
            for (std::size_t i = 0; i < n; ++i) gx += static_cast<double>(g[ch * n + i]) * xv[ch * n + i];
            s += gx * dk;
          }
          t.grad_buffer(logit_p.id)[0] += static_cast<float>(s);
        }
      });
}

// Concrete-dropout penalty for one layer with p = sigmoid(logit_p):
//   weight_reg * ||W||^2 / (1 - p) - dropout_reg * H(p)
// where H is the Bernoulli entropy. `weight_sq` is sum_squares(W).
inline Var concrete_regularizer(const Var& logit_p, const Var& weight_sq, double weight_reg, double dropout_reg) {
  detail::require_same_tape("concrete_regularizer", logit_p, weight_sq);
  detail::require(logit_p.size() == 1 && weight_sq.size() == 1, "concrete_regularizer", "expects scalars");
  const double p = detail::sigmoid(logit_p.value()[0]);
  const double s = weight_sq.value()[0];
  const double entropy = -(p * std::log(p) + (1.0 - p) * std::log1p(-p));
  const double value = weight_reg * s / (1.0 - p) - dropout_reg * entropy;
  return logit_p.tape->record(
      "concrete_regularizer", Tensor::scalar(static_cast<float>(value)),
      logit_p.requires_grad() || weight_sq.requires_grad(),
      [logit_p, weight_sq, p, s, weight_reg, dropout_reg](Tape& t, const Tensor& g) {
        if (weight_sq.requires_grad()) t.grad_buffer(weight_sq.id)[0] += static_cast<float>(g[0] * weight_reg / (1.0 - p));
        if (logit_p.requires_grad()) {
          const double d = weight_reg * s * p / (1.0 - p) - dropout_reg * p * (1.0 - p) * std::log((1.0 - p) / p);
          t.grad_buffer(logit_p.id)[0] += static_cast<float>(g[0] * d);
        }
      });
}

// ---------------------------------------------------------------- image ops

// Bilinear sampling of img [H, W] at (x + flow[0], y + flow[1]); sample
// coordinates are clamped to the image border.
inline Var grid_sample_2d(const Var& img, const Var& flow) {
  detail::require_same_tape("grid_sample_2d", img, flow);
  const Shape& is = img.shape();
  const Shape& fs = flow.shape();
  detail::require(is.size() == 2 && fs.size() == 3 && fs[0] == 2 && fs[1] == is[0] && fs[2] == is[1],
                  "grid_sample_2d", "incompatible shapes img" + shape_str(is) + " flow" + shape_str(fs));
  const std::size_t h = is[0], w = is[1], hw = h * w;
  const Tensor& iv = img.value();
  const Tensor& fv = flow.value();
  Tensor out(Shape{h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double sx = std::clamp(static_cast<double>(x) + fv[p], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(static_cast<double>(y) + fv[hw + p], 0.0, static_cast<double>(h - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - x0, ay = sy - y0;
      const double v = (1 - ay) * ((1 - ax) * iv[y0 * w + x0] + ax * iv[y0 * w + x1]) +
                       ay * ((1 - ax) * iv[y1 * w + x0] + ax * iv[y1 * w + x1]);
      out[p] = static_cast<float>(v);
    }
  return img.tape->record(
      "grid_sample_2d", std::move(out), img.requires_grad() || flow.requires_grad(),
      [img, flow, h, w, hw](Tape& t, const Tensor& g) {
        const Tensor& iv = img.value();
        const Tensor& fv = flow.value();
        float* gi = img.requires_grad() ? t.grad_buffer(img.id).data() : nullptr;
        float* gf = flow.requires_grad() ? t.grad_buffer(flow.id).data() : nullptr;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t p = y * w + x;
            const double rx = static_cast<double>(x) + fv[p];
            const double ry = static_cast<double>(y) + fv[hw + p];
            const double sx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
            const double sy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
            const std::size_t x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
            const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double ax = sx - x0, ay = sy - y0;
            const double go = g[p];
            if (gi) {
              gi[y0 * w + x0] += static_cast<float>(go * (1 - ay) * (1 - ax));
              gi[y0 * w + x1] += static_cast<float>(go * (1 - ay) * ax);
              gi[y1 * w + x0] += static_cast<float>(go * ay * (1 - ax));
              gi[y1 * w + x1] += static_cast<float>(go * ay * ax);
            }
            if (gf) {
              const double i00 = iv[y0 * w + x0], i01 = iv[y0 * w + x1], i10 = iv[y1 * w + x0], i11 = iv[y1 * w + x1];
              if (rx > 0.0 && rx < static_cast<double>(w - 1))
                gf[p] += static_cast<float>(go * ((1 - ay) * (i01 - i00) + ay * (i11 - i10)));
              if (ry > 0.0 && ry < static_cast<double>(h - 1))
                gf[hw + p] += static_cast<float>(go * ((1 - ax) * (i10 - i00) + ax * (i11 - i01)));
            }
          }
      });
}

// Mean local SSIM over all fully contained window x window patches of two
// [H, W] images, using population statistics per patch.
inline Var ssim(const Var& x, const Var& y, std::size_t window, double c1, double c2) {
  detail::require_same_tape("ssim", x, y);
  detail::require_same_shape("ssim", x, y);
  const Shape& s = x.shape();
  detail::require(s.size() == 2, "ssim", "expects 2D images, got " + shape_str(s));
  detail::require(window % 2 == 1, "ssim", "window must be odd");
  detail::require(window <= std::min(s[0], s[1]), "ssim", "window larger than image " + shape_str(s));
  const std::size_t h = s[0], w = s[1], nh = h - window + 1, nw = w - window + 1, nwin = nh * nw;
  const double npx = static_cast<double>(window * window);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  // Per-window coefficients for the gradient: dS/dx_i = (a + b x_i + c y_i) / N.
  std::vector<double> ax(nwin), bx(nwin), cx(nwin), ay(nwin), by(nwin), cy(nwin);
  double total = 0.0;
  for (std::size_t wy = 0; wy < nh; ++wy)
    for (std::size_t wx = 0; wx < nw; ++wx) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t r = 0; r < window; ++r)
        for (std::size_t c = 0; c < window; ++c) {
          const std::size_t i = (wy + r) * w + wx + c;
          const double a = xv[i], b = yv[i];
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      const double mx = sx / npx, my = sy / npx;
      const double vx = sxx / npx - mx * mx, vy = syy / npx - my * my, cxy = sxy / npx - mx * my;
      const double A = 2 * mx * my + c1, B = 2 * cxy + c2, C = mx * mx + my * my + c1, E = vx + vy + c2;
      const double S = (A * B) / (C * E);
      total += S;
      const double dS_dmx = 2 * my * B / (C * E) - S * 2 * mx / C;
      const double dS_dmy = 2 * mx * B / (C * E) - S * 2 * my / C;
      const double dS_dvx = -S / E, dS_dvy = -S / E;
      const double dS_dcxy = 2 * A / (C * E);
      const std::size_t k = wy * nw + wx;
      ax[k] = dS_dmx - 2 * mx * dS_dvx - my * dS_dcxy;
      bx[k] = 2 * dS_dvx;
      cx[k] = dS_dcxy;
      ay[k] = dS_dmy - 2 * my * dS_dvy - mx * dS_dcxy;
      by[k] = 2 * dS_dvy;
      cy[k] = dS_dcxy;
    }
  const double value = total / static_cast<double>(nwin);
  return x.tape->record(
      "ssim", Tensor::scalar(static_cast<float>(value)), x.requires_grad() || y.requires_grad(),
      [x, y, h, w, nh, nw, nwin, window, npx, ax = std::move(ax), bx = std::move(bx), cx = std::move(cx),
       ay = std::move(ay), by = std::move(by), cy = std::move(cy)](Tape& t, const Tensor& g) {
        const Tensor& xv = x.value();
        const Tensor& yv = y.value();
        const double k = g[0] / (static_cast<double>(nwin) * npx);
        for (int side = 0; side < 2; ++side) {
          const Var& v = side == 0 ? x : y;
          if (!v.requires_grad()) continue;
          const auto& A = side == 0 ? ax : ay;
          const auto& B = side == 0 ? bx : by;
          const auto& C = side == 0 ? cx : cy;
          const Tensor& self = side == 0 ? xv : yv;
          const Tensor& other = side == 0 ? yv : xv;
          std::vector<double> acc(h * w, 0.0);
          for (std::size_t wy = 0; wy < nh; ++wy)
            for (std::size_t wx = 0; wx < nw; ++wx) {
              const std::size_t kk = wy * nw + wx;
              for (std::size_t r = 0; r < window; ++r)
                for (std::size_t c = 0; c < window; ++c) {
                  const std::size_t i = (wy + r) * w + wx + c;
                  acc[i] += A[kk] + B[kk] * self[i] + C[kk] * other[i];
                }
            }
          Tensor& gv = t.grad_buffer(v.id);
          for (std::size_t i = 0; i < acc.size(); ++i) gv[i] += static_cast<float>(k * acc[i]);
        }
      });
}

// ---------------------------------------------------------------- windowed affinity

inline constexpr float kMaskedLogit = -1.0e9f;

// Logits between every target pixel p and the (2R+1)^2 source pixels in its
// window: scale * <f_tgt(p), f_src(q)>. Out-of-image window slots hold
// kMaskedLogit so a following softmax assigns them zero weight.
// f_src, f_tgt: [C, H, W]; result: [H*W, (2R+1)^2].
inline Var window_logits(const Var& f_src, const Var& f_tgt, std::size_t radius, float scale_factor) {
  detail::require_same_tape("window_logits", f_src, f_tgt);
  detail::require_same_shape("window_logits", f_src, f_tgt);
  const Shape& s = f_src.shape();
  detail::require(s.size() == 3, "window_logits", "expects [C,H,W], got " + shape_str(s));
  const std::size_t ch = s[0], h = s[1], w = s[2], hw = h * w, side = 2 * radius + 1, k = side * side;
  const long r = static_cast<long>(radius);
  const Tensor& fs = f_src.value();
  const Tensor& ft = f_tgt.value();
  Tensor out(Shape{hw, k}, kMaskedLogit);
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      for (long dy = -r; dy <= r; ++dy) {
        const long qy = y + dy;
        if (qy < 0 || qy >= static_cast<long>(h)) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long qx = x + dx;
          if (qx < 0 || qx >= static_cast<long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(qy) * w + static_cast<std::size_t>(qx);
          double dot = 0.0;
          for (std::size_t c = 0; c < ch; ++c) dot += static_cast<double>(ft[c * hw + p]) * fs[c * hw + q];
          out[p * k + static_cast<std::size_t>((dy + r) * static_cast<long>(side) + dx + r)] =
              static_cast<float>(scale_factor * dot);
        }
      }
    }
  return f_src.tape->record(
      "window_logits", std::move(out), f_src.requires_grad() || f_tgt.requires_grad(),
      [f_src, f_tgt, ch, h, w, hw, side, k, r, scale_factor](Tape& t, const Tensor& g) {
        const Tensor& fs = f_src.value();
        const Tensor& ft = f_tgt.value();
        std::vector<double> gs(f_src.requires_grad() ? ch * hw : 0, 0.0);
        std::vector<double> gt(f_tgt.requires_grad() ? ch * hw : 0, 0.0);
        for (long y = 0; y < static_cast<long>(h); ++y)
          for (long x = 0; x < static_cast<long>(w); ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            for (long dy = -r; dy <= r; ++dy) {
              const long qy = y + dy;
              if (qy < 0 || qy >= static_cast<long>(h)) continue;
              for (long dx = -r; dx <= r; ++dx) {
                const long qx = x + dx;
                if (qx < 0 || qx >= static_cast<long>(w)) continue;
                const std::size_t q = static_cast<std::size_t>(qy) * w + static_cast<std::size_t>(qx);
                const double gv =
                    scale_factor * static_cast<double>(g[p * k + static_cast<std::size_t>((dy + r) * static_cast<long>(side) + dx + r)]);
                if (gv == 0.0) continue;
                for (std::size_t c = 0; c < ch; ++c) {
                  if (!gt.empty()) gt[c * hw + p] += gv * fs[c * hw + q];
                  if (!gs.empty()) gs[c * hw + q] += gv * ft[c * hw + p];
                }
              }
            }
          }
        if (!gs.empty()) {
          Tensor& b = t.grad_buffer(f_src.id);
          for (std::size_t i = 0; i < gs.size(); ++i) b[i] += static_cast<float>(gs[i]);
        }
        if (!gt.empty()) {
          Tensor& b = t.grad_buffer(f_tgt.id);
          for (std::size_t i = 0; i < gt.size(); ++i) b[i] += static_cast<float>(gt[i]);
        }
      });
}

// out(p) = sum_q A(p, q) * src(q) over the window of p. A: [H*W, (2R+1)^2], src: [H, W].
inline Var warp_window(const Var& affinity, const Var& src, std::size_t radius) {
  detail::require_same_tape("warp_window", affinity, src);
  const Shape& as = affinity.shape();
  const Shape& ss = src.shape();
  const std::size_t side = 2 * radius + 1, k = side * side;
  detail::require(ss.size() == 2 && as.size() == 2 && as[0] == ss[0] * ss[1] && as[1] == k, "warp_window",
                  "incompatible shapes A" + shape_str(as) + " src" + shape_str(ss));
  const std::size_t h = ss[0], w = ss[1];
  const long r = static_cast<long>(radius);
  const Tensor& av = affinity.value();
  const Tensor& sv = src.value();
  Tensor out(Shape{h, w});
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        const long qy = y + dy;
        if (qy < 0 || qy >= static_cast<long>(h)) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long qx = x + dx;
          if (qx < 0 || qx >= static_cast<long>(w)) continue;
          acc += static_cast<double>(av[p * k + static_cast<std::size_t>((dy + r) * static_cast<long>(side) + dx + r)]) *
                 sv[static_cast<std::size_t>(qy) * w + static_cast<std::size_t>(qx)];
        }
      }
      out[p] = static_cast<float>(acc);
    }
  return affinity.tape->record(
      "warp_window", std::move(out), affinity.requires_grad() || src.requires_grad(),
      [affinity, src, h, w, side, k, r](Tape& t, const Tensor& g) {
        const Tensor& av = affinity.value();
        const Tensor& sv = src.value();
        float* ga = affinity.requires_grad() ? t.grad_buffer(affinity.id).data() : nullptr;
        std::vector<double> gs(src.requires_grad() ? h * w : 0, 0.0);
        for (long y = 0; y < static_cast<long>(h); ++y)
          for (long x = 0; x < static_cast<long>(w); ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            const double go = g[p];
            for (long dy = -r; dy <= r; ++dy) {
              const long qy = y + dy;
              if (qy < 0 || qy >= static_cast<long>(h)) continue;
              for (long dx = -r; dx <= r; ++dx) {
                const long qx = x + dx;
                if (qx < 0 || qx >= static_cast<long>(w)) continue;
                const std::size_t q = static_cast<std::size_t>(qy) * w + static_cast<std::size_t>(qx);
                const std::size_t slot = p * k + static_cast<std::size_t>((dy + r) * static_cast<long>(side) + dx + r);
                if (ga) ga[slot] += static_cast<float>(go * sv[q]);
                if (!gs.empty()) gs[q] += go * av[slot];
              }
            }
          }
        if (!gs.empty()) {
          Tensor& b = t.grad_buffer(src.id);
          for (std::size_t i = 0; i < gs.size(); ++i) b[i] += static_cast<float>(gs[i]);
        }
      });
}

}  // namespace spuq::grad

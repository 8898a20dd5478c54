#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metainput/graph.hpp"
#include "metainput/kernels.hpp"
#include "metainput/tensor.hpp"

namespace metainput {

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Pool2dAttrs {
  std::size_t window = 2;
  std::size_t stride = 2;
};

/// Running statistics of one batch-normalization layer.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

enum class BatchNormMode { kTrain, kInference };

struct BatchNormAttrs {
  BatchNormMode mode = BatchNormMode::kInference;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

namespace detail {

inline void add_into(std::span<float> dst, std::span<const float> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

}  // namespace detail

/// Row-wise softmax of a [N, C] matrix, max-shifted.
inline Tensor softmax_rows(const Tensor& logits) {
  detail::require_rank("softmax", logits, 2);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data().data() + i * c;
    float* o = out.data().data() + i * c;
    const float mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
  }
  return out;
}

// Elementwise add. `w` may have the full shape of `x` or any trailing suffix
// of it, in which case it is broadcast over the leading axes (a H×W×C meta
// input over an N×H×W×C batch, or a bias vector over the channel axis).
inline Var add(Var x, Var w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const bool suffix = ws.size() <= xs.size() &&
                      std::equal(ws.rbegin(), ws.rend(), xs.rbegin());
  if (!suffix) throw shape_mismatch("add", xs, ws);
  const std::size_t inner = w.value().size();
  const std::size_t outer = x.value().size() / inner;
  Tensor out(xs);
  auto xd = x.value().data();
  auto wd = w.value().data();
  auto od = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) od[o * inner + i] = xd[o * inner + i] + wd[i];
  const std::size_t xi = x.id(), wi = w.id();
  return x.graph().record("add", std::move(out), {x, w},
                          [=](Graph& g, std::span<const float> grad) {
                            if (g.needs_grad(xi)) detail::add_into(g.grad_of(xi), grad);
                            if (g.needs_grad(wi)) {
                              auto gw = g.grad_of(wi);
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < inner; ++i)
                                  gw[i] += grad[o * inner + i];
                            }
                          });
}

// [M,K] x [K,N] -> [M,N]
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw shape_mismatch("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::gemm_nn(m, n, k, av.data().data(), bv.data().data(), out.data().data());
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph().record(
      "matmul", std::move(out), {a, b}, [=](Graph& g, std::span<const float> grad) {
        const float* ad = g.value(ai).data().data();
        const float* bd = g.value(bi).data().data();
        if (g.needs_grad(ai)) kernels::gemm_nt(m, n, k, grad.data(), bd, g.grad_of(ai).data());
        if (g.needs_grad(bi)) kernels::gemm_tn(m, n, k, ad, grad.data(), g.grad_of(bi).data());
      });
}

// NHWC input [N,H,W,C] with weights [KH,KW,C,O], zero padding. Lowered to a
// single GEMM over an im2col buffer.
inline Var conv2d(Var x, Var w, Conv2dAttrs attrs = {}) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank("conv2d", xv, 4);
  detail::require_rank("conv2d", wv, 4);
  if (xv.dim(3) != wv.dim(2)) throw shape_mismatch("conv2d", xv.shape(), wv.shape());
  if (attrs.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), c = xv.dim(3);
  const std::size_t kh = wv.dim(0), kw = wv.dim(1), oc = wv.dim(3);
  const std::size_t pad = attrs.padding, stride = attrs.stride;
  if (h + 2 * pad < kh || wd + 2 * pad < kw) {
    throw shape_mismatch("conv2d", xv.shape(), wv.shape());
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t rows = n * oh * ow, kdim = kh * kw * c;

  auto cols = std::make_shared<std::vector<float>>(rows * kdim, 0.0f);
  const float* xd = xv.data().data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        float* row = cols->data() + ((b * oh + oy) * ow + ox) * kdim;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            const float* src = xd + ((b * h + iy) * wd + ix) * c;
            std::copy(src, src + c, row + (ky * kw + kx) * c);
          }
        }
      }

  Tensor out({n, oh, ow, oc});
  kernels::gemm_nn(rows, oc, kdim, cols->data(), wv.data().data(), out.data().data());

  const std::size_t xi = x.id(), wi = w.id();
  if (!w.needs_grad()) cols.reset();
  return x.graph().record(
      "conv2d", std::move(out), {x, w}, [=](Graph& g, std::span<const float> grad) {
        if (g.needs_grad(wi)) {
          kernels::gemm_tn(rows, oc, kdim, cols->data(), grad.data(), g.grad_of(wi).data());
        }
        if (g.needs_grad(xi)) {
          std::vector<float> dcols(rows * kdim, 0.0f);
          kernels::gemm_nt(rows, oc, kdim, grad.data(), g.value(wi).data().data(),
                           dcols.data());
          auto gx = g.grad_of(xi);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const float* row = dcols.data() + ((b * oh + oy) * ow + ox) * kdim;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                    float* dst = gx.data() + ((b * h + iy) * wd + ix) * c;
                    const float* src = row + (ky * kw + kx) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                  }
                }
              }
        }
      });
}

inline Var relu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  const std::size_t xi = x.id();
  return x.graph().record("relu", std::move(out), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            auto in = g.value(xi).data();
                            auto gx = g.grad_of(xi);
                            for (std::size_t i = 0; i < gx.size(); ++i)
                              if (in[i] > 0.0f) gx[i] += grad[i];
                          });
}

// Clamps to [0,1]; the gradient passes only where the input was strictly
// inside the interval.
inline Var clamp01(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = std::clamp(xd[i], 0.0f, 1.0f);
  const std::size_t xi = x.id();
  return x.graph().record("clamp01", std::move(out), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            auto in = g.value(xi).data();
                            auto gx = g.grad_of(xi);
                            for (std::size_t i = 0; i < gx.size(); ++i)
                              if (in[i] > 0.0f && in[i] < 1.0f) gx[i] += grad[i];
                          });
}

// Max pooling over NHWC, no padding, floor output size. Ties go to the first
// element in scan order.
inline Var maxpool2d(Var x, Pool2dAttrs attrs = {}) {
  const Tensor& xv = x.value();
  detail::require_rank("maxpool2d", xv, 4);
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const std::size_t k = attrs.window, s = attrs.stride;
  if (k == 0 || s == 0 || h < k || w < k) {
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " does not fit input " +
                     shape_str(xv.shape()));
  }
  const std::size_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
  Tensor out({n, oh, ow, c});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  auto xd = xv.data();
  auto od = out.data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t i = ((b * h + oy * s + ky) * w + ox * s + kx) * c + ch;
              if (xd[i] > best) {
                best = xd[i];
                best_i = i;
              }
            }
          od[o] = best;
          (*argmax)[o] = static_cast<std::uint32_t>(best_i);
        }
  const std::size_t xi = x.id();
  return x.graph().record("maxpool2d", std::move(out), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            auto gx = g.grad_of(xi);
                            for (std::size_t i = 0; i < grad.size(); ++i)
                              gx[(*argmax)[i]] += grad[i];
                          });
}

// Channel-last batch normalization over every axis except the last. Train
// mode normalizes with batch statistics and folds them into `stats` with an
// exponential moving average; inference mode uses `stats` as stored.
inline Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats,
                     BatchNormAttrs attrs = {}) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("batchnorm: input needs a batch axis, got " + shape_str(xv.shape()));
  const std::size_t c = xv.shape().back();
  const std::size_t m = xv.size() / c;
  if (gamma.value().size() != c || gamma.value().rank() != 1) {
    throw shape_mismatch("batchnorm", xv.shape(), gamma.shape());
  }
  if (beta.value().size() != c || beta.value().rank() != 1) {
    throw shape_mismatch("batchnorm", xv.shape(), beta.shape());
  }
  auto xd = xv.data();
  auto gd = gamma.value().data();
  auto bd = beta.value().data();

  auto inv_std = std::make_shared<std::vector<float>>(c);
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  Tensor out(xv.shape());
  auto od = out.data();
  const bool training = attrs.mode == BatchNormMode::kTrain;

  if (training) {
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += xd[r * c + ch];
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xd[r * c + ch] - mean[ch];
        var[ch] += d * d;
      }
    if (stats.mean.size() != c) stats.mean = Tensor({c}, 0.0f);
    if (stats.var.size() != c) stats.var = Tensor({c}, 1.0f);
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double biased = var[ch] / static_cast<double>(m);
      (*inv_std)[ch] = static_cast<float>(1.0 / std::sqrt(biased + attrs.eps));
      stats.mean[ch] = (1.0f - attrs.momentum) * stats.mean[ch] +
                       attrs.momentum * static_cast<float>(mean[ch]);
      stats.var[ch] = (1.0f - attrs.momentum) * stats.var[ch] +
                      attrs.momentum * static_cast<float>(biased * unbias);
    }
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = r * c + ch;
        (*xhat)[i] = static_cast<float>((xd[i] - mean[ch]) * (*inv_std)[ch]);
      }
  } else {
    if (stats.mean.size() != c || stats.var.size() != c) {
      throw ContractError("batchnorm: inference mode requires stored running statistics for " +
                          std::to_string(c) + " channels");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*inv_std)[ch] = 1.0f / std::sqrt(stats.var[ch] + attrs.eps);
    }
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = r * c + ch;
        (*xhat)[i] = (xd[i] - stats.mean[ch]) * (*inv_std)[ch];
      }
  }
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      od[i] = gd[ch] * (*xhat)[i] + bd[ch];
    }

  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return x.graph().record(
      "batchnorm", std::move(out), {x, gamma, beta},
      [=](Graph& g, std::span<const float> grad) {
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = r * c + ch;
            sum_g[ch] += grad[i];
            sum_gx[ch] += static_cast<double>(grad[i]) * (*xhat)[i];
          }
        if (g.needs_grad(gi)) {
          auto gg = g.grad_of(gi);
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<float>(sum_gx[ch]);
        }
        if (g.needs_grad(bi)) {
          auto gb = g.grad_of(bi);
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<float>(sum_g[ch]);
        }
        if (g.needs_grad(xi)) {
          auto gx = g.grad_of(xi);
          auto gam = g.value(gi).data();
          if (training) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t i = r * c + ch;
                const double v = grad[i] - sum_g[ch] * inv_m - (*xhat)[i] * sum_gx[ch] * inv_m;
                gx[i] += static_cast<float>(gam[ch] * (*inv_std)[ch] * v);
              }
          } else {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t i = r * c + ch;
                gx[i] += grad[i] * gam[ch] * (*inv_std)[ch];
              }
          }
        }
      });
}

// [N, ...] -> [N, prod(...)]
inline Var flatten(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = xv.dim(0);
  Tensor out = xv.reshaped({n, xv.size() / n});
  const std::size_t xi = x.id();
  return x.graph().record("flatten", std::move(out), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            detail::add_into(g.grad_of(xi), grad);
                          });
}

// Fused softmax + cross-entropy, averaged over the batch. Returns a scalar.
inline Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> labels) {
  const Tensor& lv = logits.value();
  detail::require_rank("softmax_cross_entropy", lv, 2);
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_str(lv.shape()));
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw RangeError("softmax_cross_entropy: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto probs = std::make_shared<Tensor>(softmax_rows(lv));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = lv.data().data() + i * c;
    const float mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    loss += std::log(total) + mx - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  auto targets = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  const std::size_t li = logits.id();
  return logits.graph().record(
      "softmax_cross_entropy", Tensor({1}, static_cast<float>(loss)), {logits},
      [=](Graph& g, std::span<const float> grad) {
        auto gl = g.grad_of(li);
        const float scale = grad[0] / static_cast<float>(n);
        auto p = probs->data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const float onehot = static_cast<std::size_t>((*targets)[i]) == j ? 1.0f : 0.0f;
            gl[i * c + j] += (p[i * c + j] - onehot) * scale;
          }
      });
}

inline Var sum(Var x) {
  double total = 0.0;
  for (float v : x.value().data()) total += v;
  const std::size_t xi = x.id();
  return x.graph().record("sum", Tensor({1}, static_cast<float>(total)), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            for (auto& v : g.grad_of(xi)) v += grad[0];
                          });
}

inline Var square(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto xd = xv.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * xd[i];
  const std::size_t xi = x.id();
  return x.graph().record("square", std::move(out), {x},
                          [=](Graph& g, std::span<const float> grad) {
                            auto in = g.value(xi).data();
                            auto gx = g.grad_of(xi);
                            for (std::size_t i = 0; i < gx.size(); ++i)
                              gx[i] += 2.0f * in[i] * grad[i];
                          });
}

}  // namespace metainput

#pragma once

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ctt/tensor.hpp"

// Dense reference kernels for the network core. Convention: convolution is
// cross-correlation (no kernel flip). Storage and compute are in the tensor's
// scalar type; reductions accumulate in double.
namespace ctt::ops {

struct ConvSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

inline int conv_out_extent(int in, int kernel, const ConvSpec& s) {
  const int eff_k = kernel + (kernel - 1) * (s.dilation - 1);
  return (in + 2 * s.pad - eff_k) / s.stride + 1;
}

// Valid output range [lo, hi) with in = out * stride + offset staying inside
// [0, extent); hoisted out of the inner loops so they stay branch-free.
inline void conv_valid_range(int offset, int stride, int extent, int out_extent, int& lo,
                             int& hi) {
  lo = offset < 0 ? (-offset + stride - 1) / stride : 0;
  const int limit = extent - offset;  // need out * stride < limit
  hi = limit <= 0 ? 0 : std::min(out_extent, (limit + stride - 1) / stride);
  lo = std::min(lo, hi);
}

// x: N x I x H x W, w: O x I x Kh x Kw, bias: O (optional) -> N x O x H' x W'
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  std::type_identity_t<const TensorT<T>*> bias,
                  const ConvSpec& s) {
  require(x.shape.size() == 4, "conv2d: input must be NCHW");
  require(w.shape.size() == 4, "conv2d: weights must be OIKhKw");
  require(s.stride >= 1 && s.dilation >= 1 && s.pad >= 0, "conv2d: bad spec");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  require(w.dim(1) == C, "conv2d: channel mismatch");
  if (bias) require(bias->shape == Shape{O}, "conv2d: bias size mismatch");
  const int Ho = conv_out_extent(H, Kh, s);
  const int Wo = conv_out_extent(W, Kw, s);
  require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");

  TensorT<T> y({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      T* yp = y.data.data() + (static_cast<std::size_t>(n) * O + o) * Ho * Wo;
      const T b = bias ? bias->data[o] : T(0);
      std::fill(yp, yp + static_cast<std::size_t>(Ho) * Wo, b);
      for (int c = 0; c < C; ++c) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
        const T* wp = w.data.data() + ((static_cast<std::size_t>(o) * C + c) * Kh) * Kw;
        for (int kh = 0; kh < Kh; ++kh) {
          for (int kw = 0; kw < Kw; ++kw) {
            const T wv = wp[kh * Kw + kw];
            if (wv == T(0)) continue;
            const int ih0 = kh * s.dilation - s.pad;
            const int iw0 = kw * s.dilation - s.pad;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * s.stride + ih0;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xp + static_cast<std::size_t>(ih) * W;
              T* yrow = yp + static_cast<std::size_t>(oh) * Wo;
              int lo, hi;
              conv_valid_range(iw0, s.stride, W, Wo, lo, hi);
              if (s.stride == 1) {
                for (int ow = lo; ow < hi; ++ow) yrow[ow] += wv * xrow[ow + iw0];
              } else {
                const T* xp2 = xrow + iw0 + static_cast<std::size_t>(lo) * s.stride;
                for (int ow = lo; ow < hi; ++ow, xp2 += s.stride) yrow[ow] += wv * *xp2;
              }
            }
          }
        }
      }
    }
  }
  return y;
}

// Gradients of conv2d. dx/dw/db accumulate into zero-initialized outputs.
template <class T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& s,
                     const TensorT<T>& dy, TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), Kh = w.dim(2), Kw = w.dim(3);
  const int Ho = dy.dim(2), Wo = dy.dim(3);

  if (db) {
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        const T* dyp = dy.data.data() + (static_cast<std::size_t>(n) * O + o) * Ho * Wo;
        double acc = 0.0;
        for (int i = 0; i < Ho * Wo; ++i) acc += static_cast<double>(dyp[i]);
        db->data[o] += static_cast<T>(acc);
      }
  }

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      const T* dyp = dy.data.data() + (static_cast<std::size_t>(n) * O + o) * Ho * Wo;
      for (int c = 0; c < C; ++c) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
        T* dxp = dx ? dx->data.data() + (static_cast<std::size_t>(n) * C + c) * H * W : nullptr;
        const T* wp = w.data.data() + ((static_cast<std::size_t>(o) * C + c) * Kh) * Kw;
        T* dwp = dw ? dw->data.data() + ((static_cast<std::size_t>(o) * C + c) * Kh) * Kw : nullptr;
        for (int kh = 0; kh < Kh; ++kh) {
          for (int kw = 0; kw < Kw; ++kw) {
            const int ih0 = kh * s.dilation - s.pad;
            const int iw0 = kw * s.dilation - s.pad;
            const T wv = wp[kh * Kw + kw];
            double wacc = 0.0;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * s.stride + ih0;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xp + static_cast<std::size_t>(ih) * W;
              T* dxrow = dxp ? dxp + static_cast<std::size_t>(ih) * W : nullptr;
              const T* dyrow = dyp + static_cast<std::size_t>(oh) * Wo;
              int lo, hi;
              conv_valid_range(iw0, s.stride, W, Wo, lo, hi);
              if (s.stride == 1) {
                if (dwp) {
                  // Fixed 4-lane partial sums: deterministic and vectorizable.
                  T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
                  const T* xr = xrow + iw0;
                  int ow = lo;
                  for (; ow + 4 <= hi; ow += 4) {
                    acc0 += dyrow[ow] * xr[ow];
                    acc1 += dyrow[ow + 1] * xr[ow + 1];
                    acc2 += dyrow[ow + 2] * xr[ow + 2];
                    acc3 += dyrow[ow + 3] * xr[ow + 3];
                  }
                  for (; ow < hi; ++ow) acc0 += dyrow[ow] * xr[ow];
                  wacc += ((acc0 + acc1) + (acc2 + acc3));
                }
                if (dxrow)
                  for (int ow = lo; ow < hi; ++ow) dxrow[ow + iw0] += wv * dyrow[ow];
              } else {
                const int base = iw0 + lo * s.stride;
                if (dwp) {
                  T racc = 0;
                  const T* xp2 = xrow + base;
                  for (int ow = lo; ow < hi; ++ow, xp2 += s.stride) racc += dyrow[ow] * *xp2;
                  wacc += racc;
                }
                if (dxrow) {
                  T* dxp2 = dxrow + base;
                  for (int ow = lo; ow < hi; ++ow, dxp2 += s.stride) *dxp2 += wv * dyrow[ow];
                }
              }
            }
            if (dwp) dwp[kh * Kw + kw] += static_cast<T>(wacc);
          }
        }
      }
    }
  }
}

enum class BnMode { Train, Eval };

template <class T>
struct BnBatchStats {
  std::vector<T> mean;     // per channel
  std::vector<T> inv_std;  // 1 / sqrt(var + eps)
};

// y = gamma * (x - mu) / sqrt(var + eps) + beta, per channel over N*H*W.
// Train mode uses biased batch statistics and updates running stats in place:
// running = (1 - momentum) * running + momentum * batch.
template <class T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      std::vector<T>& running_mean, std::vector<T>& running_var, T momentum,
                      T eps, BnMode mode, std::type_identity_t<BnBatchStats<T>*> stats_out) {
  require(x.shape.size() == 4, "batch_norm: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(gamma.shape == Shape{C} && beta.shape == Shape{C}, "batch_norm: param size mismatch");
  require(static_cast<int>(running_mean.size()) == C &&
              static_cast<int>(running_var.size()) == C,
          "batch_norm: running stats size mismatch");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t per_channel = static_cast<std::size_t>(N) * plane;

  std::vector<T> mean(C), inv_std(C);
  if (mode == BnMode::Train) {
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
      }
      const double mu = sum / static_cast<double>(per_channel);
      double sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = xp[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(per_channel);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * static_cast<T>(mu);
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) +
                                                  static_cast<double>(eps)));
    }
  }

  TensorT<T> y(x.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* yp = y.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T a = gamma.data[c] * inv_std[c];
      const T b = beta.data[c] - a * mean[c];
      for (std::size_t i = 0; i < plane; ++i) yp[i] = a * xp[i] + b;
    }
  if (stats_out) {
    stats_out->mean = std::move(mean);
    stats_out->inv_std = std::move(inv_std);
  }
  return y;
}

// Train-mode backward; mu/inv_std are the batch statistics from forward.
template <class T>
void batch_norm_backward_train(const TensorT<T>& x, const TensorT<T>& gamma,
                               const BnBatchStats<T>& st, const TensorT<T>& dy, TensorT<T>* dx,
                               TensorT<T>* dgamma, TensorT<T>* dbeta) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double m = static_cast<double>(N) * plane;
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* dyp = dy.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (xp[i] - st.mean[c]) * st.inv_std[c];
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * xhat;
      }
    }
    if (dgamma) dgamma->data[c] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta->data[c] += static_cast<T>(sum_dy);
    if (dx) {
      const double g = gamma.data[c];
      const double istd = st.inv_std[c];
      const double mean_dy = sum_dy / m;
      const double mean_dy_xhat = sum_dy_xhat / m;
      for (int n = 0; n < N; ++n) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        const T* dyp = dy.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        T* dxp = dx->data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (xp[i] - st.mean[c]) * istd;
          dxp[i] += static_cast<T>(g * istd * (dyp[i] - mean_dy - xhat * mean_dy_xhat));
        }
      }
    }
  }
}

// Eval-mode backward: per-channel affine with frozen statistics.
template <class T>
void batch_norm_backward_eval(const TensorT<T>& x, const TensorT<T>& gamma,
                              const BnBatchStats<T>& st, const TensorT<T>& dy, TensorT<T>* dx,
                              TensorT<T>* dgamma, TensorT<T>* dbeta) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* xp = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      const T* dyp = dy.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      T* dxp = dx ? dx->data.data() + (static_cast<std::size_t>(n) * C + c) * plane : nullptr;
      const T a = gamma.data[c] * st.inv_std[c];
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * static_cast<double>((xp[i] - st.mean[c]) * st.inv_std[c]);
        if (dxp) dxp[i] += a * dyp[i];
      }
    }
    if (dgamma) dgamma->data[c] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta->data[c] += static_cast<T>(sum_dy);
  }
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// Logistic, clamped into the open interval so saturated gates never round to
// exactly 0 or 1 in floating point.
template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  const T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  TensorT<T> y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i)
    y.data[i] = std::clamp(T(1) / (T(1) + std::exp(-x.data[i])), lo, hi);
  return y;
}

// 2-D max pooling; argmax (flat input offset) recorded for backward. Ties go
// to the first maximum in scan order.
template <class T>
TensorT<T> max_pool2d(const TensorT<T>& x, int kernel, int stride, int pad,
                      std::vector<std::int32_t>* argmax) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  ConvSpec s{stride, pad, 1};
  const int Ho = conv_out_extent(H, kernel, s);
  const int Wo = conv_out_extent(W, kernel, s);
  require(Ho >= 1 && Wo >= 1, "max_pool2d: output would be empty");
  TensorT<T> y({N, C, Ho, Wo});
  if (argmax) argmax->assign(y.numel(), -1);
  std::size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      const T* xp = x.data.data() + base;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t best_idx = -1;
          for (int kh = 0; kh < kernel; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < kernel; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= W) continue;
              const T v = xp[ih * W + iw];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(ih * W + iw);
              }
            }
          }
          y.data[oi] = best;
          if (argmax) (*argmax)[oi] = static_cast<std::int32_t>(base) + best_idx;
        }
    }
  return y;
}

enum class PoolKind { Avg, Max };

// N x C x H x W -> N x C. Max pooling records flat argmax offsets.
template <class T>
TensorT<T> global_pool(const TensorT<T>& x, PoolKind kind, std::vector<std::int32_t>* argmax) {
  require(x.shape.size() == 4, "global_pool: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  TensorT<T> y({N, C});
  if (argmax) argmax->assign(y.numel(), -1);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      const T* xp = x.data.data() + base;
      if (kind == PoolKind::Avg) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += xp[i];
        y.data[static_cast<std::size_t>(n) * C + c] =
            static_cast<T>(acc / static_cast<double>(plane));
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < plane; ++i)
          if (xp[i] > xp[best]) best = i;
        y.data[static_cast<std::size_t>(n) * C + c] = xp[best];
        if (argmax)
          (*argmax)[static_cast<std::size_t>(n) * C + c] =
              static_cast<std::int32_t>(base + best);
      }
    }
  return y;
}

enum class ReduceKind { Mean, Max };

// N x C x H x W -> N x 1 x H x W. Max records the winning channel.
template <class T>
TensorT<T> channel_reduce(const TensorT<T>& x, ReduceKind kind,
                          std::vector<std::int32_t>* argmax) {
  require(x.shape.size() == 4, "channel_reduce: input must be NCHW");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  TensorT<T> y({N, 1, H, W});
  if (argmax) argmax->assign(y.numel(), -1);
  for (int n = 0; n < N; ++n) {
    const T* xp = x.data.data() + static_cast<std::size_t>(n) * C * plane;
    T* yp = y.data.data() + static_cast<std::size_t>(n) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (kind == ReduceKind::Mean) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c) acc += xp[c * plane + i];
        yp[i] = static_cast<T>(acc / C);
      } else {
        int best = 0;
        for (int c = 1; c < C; ++c)
          if (xp[c * plane + i] > xp[best * plane + i]) best = c;
        yp[i] = xp[best * plane + i];
        if (argmax)
          (*argmax)[static_cast<std::size_t>(n) * plane + i] = best;
      }
    }
  }
  return y;
}

// x: N x D, w: D x K, b: K -> N x K
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  std::type_identity_t<const TensorT<T>*> b) {
  require(x.shape.size() == 2 && w.shape.size() == 2, "linear: rank mismatch");
  const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
  require(w.dim(0) == D, "linear: inner dimension mismatch");
  if (b) require(b->shape == Shape{K}, "linear: bias size mismatch");
  TensorT<T> y({N, K});
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      double acc = b ? static_cast<double>(b->data[k]) : 0.0;
      const T* xp = x.data.data() + static_cast<std::size_t>(n) * D;
      for (int d = 0; d < D; ++d) acc += static_cast<double>(xp[d]) * w.data[d * K + k];
      y.data[static_cast<std::size_t>(n) * K + k] = static_cast<T>(acc);
    }
  return y;
}

template <class T>
void linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                     TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
  const int N = x.dim(0), D = x.dim(1), K = w.dim(1);
  for (int n = 0; n < N; ++n) {
    const T* xp = x.data.data() + static_cast<std::size_t>(n) * D;
    const T* dyp = dy.data.data() + static_cast<std::size_t>(n) * K;
    if (dx) {
      T* dxp = dx->data.data() + static_cast<std::size_t>(n) * D;
      for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += static_cast<double>(w.data[d * K + k]) * dyp[k];
        dxp[d] += static_cast<T>(acc);
      }
    }
    if (dw)
      for (int d = 0; d < D; ++d)
        for (int k = 0; k < K; ++k) dw->data[d * K + k] += xp[d] * dyp[k];
    if (db)
      for (int k = 0; k < K; ++k) db->data[k] += dyp[k];
  }
}

// Mean cross-entropy over the batch, stabilized by max subtraction.
// Optional per-class weights rescale each sample's term; the mean then divides
// by the total weight instead of N. probs_out receives softmax rows.
template <class T>
T softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                        std::type_identity_t<const std::vector<T>*> class_weights,
                        std::type_identity_t<TensorT<T>*> probs_out) {
  require(logits.shape.size() == 2, "softmax_cross_entropy: logits must be N x K");
  const int N = logits.dim(0), K = logits.dim(1);
  require(static_cast<int>(targets.size()) == N, "softmax_cross_entropy: target count mismatch");
  TensorT<T> probs(logits.shape);
  double loss = 0.0;
  double weight_sum = 0.0;
  for (int n = 0; n < N; ++n) {
    const int t = targets[n];
    require(t >= 0 && t < K, "softmax_cross_entropy: target out of range");
    const T* lp = logits.data.data() + static_cast<std::size_t>(n) * K;
    T* pp = probs.data.data() + static_cast<std::size_t>(n) * K;
    T mx = lp[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, lp[k]);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(lp[k] - mx));
    const double log_denom = std::log(denom);
    for (int k = 0; k < K; ++k)
      pp[k] = static_cast<T>(std::exp(static_cast<double>(lp[k] - mx) - log_denom));
    const double wt = class_weights ? static_cast<double>((*class_weights)[t]) : 1.0;
    loss += wt * (log_denom - static_cast<double>(lp[t] - mx));
    weight_sum += wt;
  }
  if (probs_out) *probs_out = std::move(probs);
  return static_cast<T>(loss / weight_sum);
}

// dL/dlogits = w_t * (softmax - onehot) / sum(w).
template <class T>
TensorT<T> softmax_cross_entropy_backward(const TensorT<T>& probs, const std::vector<int>& targets,
                                          std::type_identity_t<const std::vector<T>*> class_weights) {
  const int N = probs.dim(0), K = probs.dim(1);
  double weight_sum = 0.0;
  for (int n = 0; n < N; ++n)
    weight_sum += class_weights ? static_cast<double>((*class_weights)[targets[n]]) : 1.0;
  TensorT<T> dl(probs.shape);
  for (int n = 0; n < N; ++n) {
    const double wt =
        (class_weights ? static_cast<double>((*class_weights)[targets[n]]) : 1.0) / weight_sum;
    const T* pp = probs.data.data() + static_cast<std::size_t>(n) * K;
    T* dp = dl.data.data() + static_cast<std::size_t>(n) * K;
    for (int k = 0; k < K; ++k)
      dp[k] = static_cast<T>(wt * (static_cast<double>(pp[k]) - (k == targets[n] ? 1.0 : 0.0)));
  }
  return dl;
}

}  // namespace ctt::ops

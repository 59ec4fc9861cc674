#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "sfmk/tensor.hpp"

namespace sfmk {
namespace detail {

// C (M,N) += A (M,K) * B (K,N). K is blocked so the active slab of B stays in
// cache; the j loop is the vectorized axis.
inline void gemm_acc(const real* A, const real* B, real* C, int64_t M,
                     int64_t K, int64_t N) {
  constexpr int64_t kc = 256;
  for (int64_t k0 = 0; k0 < K; k0 += kc) {
    const int64_t k1 = std::min(k0 + kc, K);
    for (int64_t i = 0; i < M; ++i) {
      const real* a = A + i * K;
      real* c = C + i * N;
      int64_t k = k0;
      for (; k + 4 <= k1; k += 4) {
        const real a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
        const real* b0 = B + k * N;
        const real* b1 = b0 + N;
        const real* b2 = b1 + N;
        const real* b3 = b2 + N;
        for (int64_t j = 0; j < N; ++j)
          c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; k < k1; ++k) {
        const real a0 = a[k];
        const real* b0 = B + k * N;
        for (int64_t j = 0; j < N; ++j) c[j] += a0 * b0[j];
      }
    }
  }
}

// C (M,K) += A (M,N) * B(K,N)^T, i.e. rows-by-rows dot products.
inline void gemm_abt_acc(const real* A, const real* B, real* C, int64_t M,
                         int64_t N, int64_t K) {
  for (int64_t i = 0; i < M; ++i) {
    const real* a = A + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const real* b = B + k * N;
      real acc = 0;
      for (int64_t j = 0; j < N; ++j) acc += a[j] * b[j];
      C[i * K + k] += acc;
    }
  }
}

// C (K,N) += A (M,K)^T * B (M,N).
inline void gemm_atb_acc(const real* A, const real* B, real* C, int64_t M,
                         int64_t K, int64_t N) {
  for (int64_t i = 0; i < M; ++i) {
    const real* a = A + i * K;
    const real* b = B + i * N;
    for (int64_t k = 0; k < K; ++k) {
      const real ak = a[k];
      if (ak == real(0)) continue;
      real* c = C + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += ak * b[j];
    }
  }
}

struct ConvGeom {
  int64_t ci, h, w, co, kh, kw, stride, pad, ho, wo;
};

inline ConvGeom conv_geom(const char* op, const Shape& x, const Shape& wt,
                          int64_t stride, int64_t pad) {
  if (x.size() != 3 || wt.size() != 4)
    throw ShapeError(std::string(op) + ": expected input (C,H,W) and kernel "
                     "(Co,Ci,kh,kw), got " + shape_str(x) + " and " +
                     shape_str(wt));
  ConvGeom g{};
  g.ci = x[0];
  g.h = x[1];
  g.w = x[2];
  g.co = wt[0];
  g.kh = wt[2];
  g.kw = wt[3];
  g.stride = stride;
  g.pad = pad;
  if (wt[1] != g.ci)
    throw ShapeError(std::string(op) + ": kernel expects " +
                     std::to_string(wt[1]) + " input channels, image has " +
                     std::to_string(g.ci));
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho < 1 || g.wo < 1)
    throw ShapeError(std::string(op) + ": kernel does not fit input " +
                     shape_str(x));
  return g;
}

inline void im2col(const real* x, const ConvGeom& g, real* col) {
  const int64_t plane = g.h * g.w;
  const int64_t n = g.ho * g.wo;
  for (int64_t c = 0; c < g.ci; ++c)
    for (int64_t u = 0; u < g.kh; ++u)
      for (int64_t v = 0; v < g.kw; ++v) {
        real* row = col + ((c * g.kh + u) * g.kw + v) * n;
        for (int64_t oh = 0; oh < g.ho; ++oh) {
          const int64_t iy = oh * g.stride - g.pad + u;
          real* dst = row + oh * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, real(0));
            continue;
          }
          const real* src = x + c * plane + iy * g.w;
          for (int64_t ow = 0; ow < g.wo; ++ow) {
            const int64_t ix = ow * g.stride - g.pad + v;
            dst[ow] = (ix >= 0 && ix < g.w) ? src[ix] : real(0);
          }
        }
      }
}

inline void col2im_acc(const real* col, const ConvGeom& g, real* x) {
  const int64_t plane = g.h * g.w;
  const int64_t n = g.ho * g.wo;
  for (int64_t c = 0; c < g.ci; ++c)
    for (int64_t u = 0; u < g.kh; ++u)
      for (int64_t v = 0; v < g.kw; ++v) {
        const real* row = col + ((c * g.kh + u) * g.kw + v) * n;
        for (int64_t oh = 0; oh < g.ho; ++oh) {
          const int64_t iy = oh * g.stride - g.pad + u;
          if (iy < 0 || iy >= g.h) continue;
          real* dst = x + c * plane + iy * g.w;
          const real* src = row + oh * g.wo;
          for (int64_t ow = 0; ow < g.wo; ++ow) {
            const int64_t ix = ow * g.stride - g.pad + v;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ow];
          }
        }
      }
}

}  // namespace detail

// ---- matmul ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
          " and " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ, " +
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::make_node(Shape{m, n});
  detail::gemm_acc(a.data().data(), b.data().data(), out->value.data(), m, k, n);
  return detail::finish("matmul", out, {a.node(), b.node()},
                        [self = out.get(), an = a.node(), bn = b.node(), m, k, n] {
    const real* g = self->grad.data();
    if (an->requires_grad)
      detail::gemm_abt_acc(g, bn->value.data(), an->grad_data(), m, n, k);
    if (bn->requires_grad)
      detail::gemm_atb_acc(an->value.data(), g, bn->grad_data(), m, k, n);
  });
}

// ---- convolutions ----

// x: (Ci,H,W), w: (Co,Ci,kh,kw), optional bias: (Co). Zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int64_t stride = 1, int64_t pad = 0) {
  auto g = detail::conv_geom("conv2d", x.shape(), w.shape(), stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias)
    require(bias.rank() == 1 && bias.dim(0) == g.co,
            "conv2d: bias must be (Co)");
  const int64_t n = g.ho * g.wo;
  const int64_t kdim = g.ci * g.kh * g.kw;
  auto col = std::make_shared<std::vector<real>>(
      static_cast<size_t>(kdim * n));
  detail::im2col(x.data().data(), g, col->data());
  auto out = detail::make_node(Shape{g.co, g.ho, g.wo});
  detail::gemm_acc(w.data().data(), col->data(), out->value.data(), g.co, kdim,
                   n);
  if (has_bias) {
    for (int64_t c = 0; c < g.co; ++c) {
      const real b = bias.data()[c];
      real* o = out->value.data() + c * n;
      for (int64_t i = 0; i < n; ++i) o[i] += b;
    }
  }
  std::vector<detail::NodePtr> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  return detail::finish("conv2d", out, parents,
                        [self = out.get(), xn = x.node(), wn = w.node(),
                         bn = has_bias ? bias.node() : detail::NodePtr(), g,
                         col, kdim, n] {
    const real* grad = self->grad.data();
    if (bn && bn->requires_grad) {
      real* gb = bn->grad_data();
      for (int64_t c = 0; c < g.co; ++c) {
        real acc = 0;
        const real* gr = grad + c * n;
        for (int64_t i = 0; i < n; ++i) acc += gr[i];
        gb[c] += acc;
      }
    }
    if (wn->requires_grad)
      detail::gemm_abt_acc(grad, col->data(), wn->grad_data(), g.co, n, kdim);
    if (xn->requires_grad) {
      std::vector<real> dcol(static_cast<size_t>(kdim * n), real(0));
      detail::gemm_atb_acc(wn->value.data(), grad, dcol.data(), g.co, kdim, n);
      detail::col2im_acc(dcol.data(), g, xn->grad_data());
    }
  });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int64_t stride = 1,
                     int64_t pad = 0) {
  return conv2d(x, w, Tensor(), stride, pad);
}

// x: (Ci,H,W), w: (Ci,Co,kh,kw), output (Co, (H-1)s+kh-2p, (W-1)s+kw-2p).
inline Tensor transpose_conv2d(const Tensor& x, const Tensor& w,
                               const Tensor& bias, int64_t stride = 1,
                               int64_t pad = 0) {
  require(x.rank() == 3 && w.rank() == 4,
          "transpose_conv2d: expected input (Ci,H,W) and kernel (Ci,Co,kh,kw)");
  const int64_t ci = x.dim(0), h = x.dim(1), wdt = x.dim(2);
  require(w.dim(0) == ci, "transpose_conv2d: kernel expects " +
          std::to_string(w.dim(0)) + " input channels, image has " +
          std::to_string(ci));
  const int64_t co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = (h - 1) * stride + kh - 2 * pad;
  const int64_t wo = (wdt - 1) * stride + kw - 2 * pad;
  require(ho > 0 && wo > 0, "transpose_conv2d: empty output");
  const bool has_bias = bias.defined();
  if (has_bias)
    require(bias.rank() == 1 && bias.dim(0) == co,
            "transpose_conv2d: bias must be (Co)");

  // The forward pass is the data-gradient of an ordinary convolution whose
  // geometry maps (Co,ho,wo) -> (Ci,h,w); reuse that description throughout.
  detail::ConvGeom g{co, ho, wo, ci, kh, kw, stride, pad, h, wdt};
  const int64_t kdim = co * kh * kw;
  const int64_t n = h * wdt;
  std::vector<real> col(static_cast<size_t>(kdim * n), real(0));
  detail::gemm_atb_acc(w.data().data(), x.data().data(), col.data(), ci, kdim,
                       n);
  auto out = detail::make_node(Shape{co, ho, wo});
  detail::col2im_acc(col.data(), g, out->value.data());
  if (has_bias) {
    const int64_t plane = ho * wo;
    for (int64_t c = 0; c < co; ++c) {
      const real b = bias.data()[c];
      real* o = out->value.data() + c * plane;
      for (int64_t i = 0; i < plane; ++i) o[i] += b;
    }
  }
  std::vector<detail::NodePtr> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  return detail::finish("transpose_conv2d", out, parents,
                        [self = out.get(), xn = x.node(), wn = w.node(),
                         bn = has_bias ? bias.node() : detail::NodePtr(), g,
                         ci, co, kdim, n] {
    const real* grad = self->grad.data();
    if (bn && bn->requires_grad) {
      const int64_t plane = g.h * g.w;
      real* gb = bn->grad_data();
      for (int64_t c = 0; c < co; ++c) {
        real acc = 0;
        const real* gr = grad + c * plane;
        for (int64_t i = 0; i < plane; ++i) acc += gr[i];
        gb[c] += acc;
      }
    }
    std::vector<real> dcol(static_cast<size_t>(kdim * n));
    detail::im2col(grad, g, dcol.data());
    if (xn->requires_grad)
      detail::gemm_acc(wn->value.data(), dcol.data(), xn->grad_data(), ci,
                       kdim, n);
    if (wn->requires_grad)
      detail::gemm_abt_acc(xn->value.data(), dcol.data(), wn->grad_data(), ci,
                           n, kdim);
  });
}

inline Tensor transpose_conv2d(const Tensor& x, const Tensor& w,
                               int64_t stride = 1, int64_t pad = 0) {
  return transpose_conv2d(x, w, Tensor(), stride, pad);
}

// ---- pooling ----

// Mean pooling over k x k windows. When count_include_pad is false the mean
// divides by the number of in-bounds taps, which is what the windowed image
// statistics in the losses expect at borders.
inline Tensor avg_pool(const Tensor& x, int64_t k, int64_t stride, int64_t pad,
                       bool count_include_pad = false) {
  require(x.rank() == 3, "avg_pool: expected (C,H,W), got " +
          shape_str(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (w + 2 * pad - k) / stride + 1;
  require(ho > 0 && wo > 0, "avg_pool: window does not fit input");
  auto out = detail::make_node(Shape{c, ho, wo});
  const auto& xv = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow) {
        real acc = 0;
        int64_t cnt = 0;
        for (int64_t u = 0; u < k; ++u) {
          const int64_t iy = oh * stride - pad + u;
          if (iy < 0 || iy >= h) continue;
          for (int64_t v = 0; v < k; ++v) {
            const int64_t ix = ow * stride - pad + v;
            if (ix < 0 || ix >= w) continue;
            acc += xv[(ch * h + iy) * w + ix];
            ++cnt;
          }
        }
        const int64_t denom = count_include_pad ? k * k : cnt;
        out->value[(ch * ho + oh) * wo + ow] =
            denom > 0 ? acc / static_cast<real>(denom) : real(0);
      }
  return detail::finish("avg_pool", out, {x.node()},
                        [self = out.get(), xn = x.node(), c, h, w, ho, wo, k,
                         stride, pad, count_include_pad] {
    const real* g = self->grad.data();
    real* gx = xn->grad_data();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          int64_t cnt = 0;
          if (count_include_pad) {
            cnt = k * k;
          } else {
            for (int64_t u = 0; u < k; ++u) {
              const int64_t iy = oh * stride - pad + u;
              if (iy < 0 || iy >= h) continue;
              for (int64_t v = 0; v < k; ++v) {
                const int64_t ix = ow * stride - pad + v;
                if (ix >= 0 && ix < w) ++cnt;
              }
            }
          }
          if (cnt == 0) continue;
          const real gv = g[(ch * ho + oh) * wo + ow] / static_cast<real>(cnt);
          for (int64_t u = 0; u < k; ++u) {
            const int64_t iy = oh * stride - pad + u;
            if (iy < 0 || iy >= h) continue;
            for (int64_t v = 0; v < k; ++v) {
              const int64_t ix = ow * stride - pad + v;
              if (ix >= 0 && ix < w) gx[(ch * h + iy) * w + ix] += gv;
            }
          }
        }
  });
}

// ---- row-wise softmax ----

// Softmax over the last axis; leading axes are treated as rows.
inline Tensor softmax(const Tensor& x) {
  require(x.rank() >= 1, "softmax: rank must be >= 1");
  const int64_t n = x.shape().back();
  const int64_t rows = x.size() / n;
  auto out = detail::make_node(x.shape());
  const auto& xv = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const real* row = xv.data() + r * n;
    real* orow = out->value.data() + r * n;
    real mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    real sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      orow[i] = std::exp(row[i] - mx);
      sum += orow[i];
    }
    for (int64_t i = 0; i < n; ++i) orow[i] /= sum;
  }
  return detail::finish("softmax", out, {x.node()},
                        [self = out.get(), xn = x.node(), rows, n] {
    const real* g = self->grad.data();
    const real* y = self->value.data();
    real* gx = xn->grad_data();
    for (int64_t r = 0; r < rows; ++r) {
      const real* gr = g + r * n;
      const real* yr = y + r * n;
      real dot = 0;
      for (int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      real* gxr = gx + r * n;
      for (int64_t i = 0; i < n; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
  });
}

// ---- normalization ----

// Normalizes the last axis of (N,d); gamma and beta have shape (d).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, real eps = real(1e-5)) {
  require(x.rank() >= 1, "layer_norm: rank must be >= 1");
  const int64_t d = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == d &&
          beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: gamma/beta must have shape (d)");
  const int64_t rows = x.size() / d;
  auto out = detail::make_node(x.shape());
  auto stats = std::make_shared<std::vector<real>>(
      static_cast<size_t>(rows * 2));
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int64_t r = 0; r < rows; ++r) {
    const real* row = xv.data() + r * d;
    real mu = 0;
    for (int64_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<real>(d);
    real var = 0;
    for (int64_t i = 0; i < d; ++i) {
      const real c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<real>(d);
    const real inv = real(1) / std::sqrt(var + eps);
    (*stats)[r * 2] = mu;
    (*stats)[r * 2 + 1] = inv;
    real* orow = out->value.data() + r * d;
    for (int64_t i = 0; i < d; ++i)
      orow[i] = (row[i] - mu) * inv * gv[i] + bv[i];
  }
  return detail::finish("layer_norm", out,
                        {x.node(), gamma.node(), beta.node()},
                        [self = out.get(), xn = x.node(), gn = gamma.node(),
                         bn = beta.node(), rows, d, stats] {
    const real* g = self->grad.data();
    const real* xv = xn->value.data();
    const real* gv = gn->value.data();
    real* gx = xn->requires_grad ? xn->grad_data() : nullptr;
    real* gg = gn->requires_grad ? gn->grad_data() : nullptr;
    real* gb = bn->requires_grad ? bn->grad_data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const real mu = (*stats)[r * 2];
      const real inv = (*stats)[r * 2 + 1];
      const real* gr = g + r * d;
      const real* row = xv + r * d;
      if (gg || gb) {
        for (int64_t i = 0; i < d; ++i) {
          const real xhat = (row[i] - mu) * inv;
          if (gg) gg[i] += gr[i] * xhat;
          if (gb) gb[i] += gr[i];
        }
      }
      if (gx) {
        real mean_t = 0, mean_tx = 0;
        for (int64_t i = 0; i < d; ++i) {
          const real t = gr[i] * gv[i];
          mean_t += t;
          mean_tx += t * (row[i] - mu) * inv;
        }
        mean_t /= static_cast<real>(d);
        mean_tx /= static_cast<real>(d);
        real* gxr = gx + r * d;
        for (int64_t i = 0; i < d; ++i) {
          const real t = gr[i] * gv[i];
          const real xhat = (row[i] - mu) * inv;
          gxr[i] += inv * (t - mean_t - xhat * mean_tx);
        }
      }
    }
  });
}

// Per-channel normalization of (C,H,W) using statistics of this activation;
// fills batch_mean/batch_var (biased) so callers can maintain running stats.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma,
                               const Tensor& beta, real eps,
                               std::vector<real>* batch_mean = nullptr,
                               std::vector<real>* batch_var = nullptr) {
  require(x.rank() == 3, "batch_norm: expected (C,H,W), got " +
          shape_str(x.shape()));
  const int64_t c = x.dim(0);
  const int64_t m = x.dim(1) * x.dim(2);
  require(gamma.rank() == 1 && gamma.dim(0) == c &&
          beta.rank() == 1 && beta.dim(0) == c,
          "batch_norm: gamma/beta must have shape (C)");
  auto out = detail::make_node(x.shape());
  auto stats = std::make_shared<std::vector<real>>(static_cast<size_t>(c * 2));
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const real* plane = xv.data() + ch * m;
    real mu = 0;
    for (int64_t i = 0; i < m; ++i) mu += plane[i];
    mu /= static_cast<real>(m);
    real var = 0;
    for (int64_t i = 0; i < m; ++i) {
      const real d = plane[i] - mu;
      var += d * d;
    }
    var /= static_cast<real>(m);
    (*stats)[ch * 2] = mu;
    (*stats)[ch * 2 + 1] = var;
    const real inv = real(1) / std::sqrt(var + eps);
    real* oplane = out->value.data() + ch * m;
    for (int64_t i = 0; i < m; ++i)
      oplane[i] = (plane[i] - mu) * inv * gv[ch] + bv[ch];
  }
  if (batch_mean) {
    batch_mean->resize(c);
    for (int64_t ch = 0; ch < c; ++ch) (*batch_mean)[ch] = (*stats)[ch * 2];
  }
  if (batch_var) {
    batch_var->resize(c);
    for (int64_t ch = 0; ch < c; ++ch) (*batch_var)[ch] = (*stats)[ch * 2 + 1];
  }
  return detail::finish("batch_norm", out,
                        {x.node(), gamma.node(), beta.node()},
                        [self = out.get(), xn = x.node(), gn = gamma.node(),
                         bn = beta.node(), c, m, eps, stats] {
    const real* g = self->grad.data();
    const real* xv = xn->value.data();
    const real* gv = gn->value.data();
    real* gx = xn->requires_grad ? xn->grad_data() : nullptr;
    real* gg = gn->requires_grad ? gn->grad_data() : nullptr;
    real* gb = bn->requires_grad ? bn->grad_data() : nullptr;
    for (int64_t ch = 0; ch < c; ++ch) {
      const real mu = (*stats)[ch * 2];
      const real var = (*stats)[ch * 2 + 1];
      const real inv = real(1) / std::sqrt(var + eps);
      const real* gr = g + ch * m;
      const real* plane = xv + ch * m;
      real sum_g = 0, sum_gx = 0;
      for (int64_t i = 0; i < m; ++i) {
        sum_g += gr[i];
        sum_gx += gr[i] * (plane[i] - mu) * inv;
      }
      if (gg) gg[ch] += sum_gx;
      if (gb) gb[ch] += sum_g;
      if (gx) {
        const real gamma_ch = gv[ch];
        const real mean_g = sum_g / static_cast<real>(m);
        const real mean_gx = sum_gx / static_cast<real>(m);
        real* gxp = gx + ch * m;
        for (int64_t i = 0; i < m; ++i) {
          const real xhat = (plane[i] - mu) * inv;
          gxp[i] += gamma_ch * inv * (gr[i] - mean_g - xhat * mean_gx);
        }
      }
    }
  });
}

// Per-channel affine with frozen statistics (inference path).
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta,
                              const std::vector<real>& mean,
                              const std::vector<real>& var, real eps) {
  require(x.rank() == 3, "batch_norm: expected (C,H,W)");
  const int64_t c = x.dim(0);
  const int64_t m = x.dim(1) * x.dim(2);
  require(static_cast<int64_t>(mean.size()) == c &&
          static_cast<int64_t>(var.size()) == c,
          "batch_norm: running statistics have wrong length");
  auto out = detail::make_node(x.shape());
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto inv = std::make_shared<std::vector<real>>(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    (*inv)[ch] = real(1) / std::sqrt(var[ch] + eps);
    const real* plane = xv.data() + ch * m;
    real* oplane = out->value.data() + ch * m;
    for (int64_t i = 0; i < m; ++i)
      oplane[i] = (plane[i] - mean[ch]) * (*inv)[ch] * gv[ch] + bv[ch];
  }
  auto mean_copy = std::make_shared<std::vector<real>>(mean);
  return detail::finish("batch_norm", out,
                        {x.node(), gamma.node(), beta.node()},
                        [self = out.get(), xn = x.node(), gn = gamma.node(),
                         bn = beta.node(), c, m, inv, mean_copy] {
    const real* g = self->grad.data();
    const real* xv = xn->value.data();
    const real* gv = gn->value.data();
    real* gx = xn->requires_grad ? xn->grad_data() : nullptr;
    real* gg = gn->requires_grad ? gn->grad_data() : nullptr;
    real* gb = bn->requires_grad ? bn->grad_data() : nullptr;
    for (int64_t ch = 0; ch < c; ++ch) {
      const real* gr = g + ch * m;
      const real* plane = xv + ch * m;
      const real ic = (*inv)[ch];
      const real mc = (*mean_copy)[ch];
      if (gx) {
        const real s = gv[ch] * ic;
        real* gxp = gx + ch * m;
        for (int64_t i = 0; i < m; ++i) gxp[i] += gr[i] * s;
      }
      if (gg || gb) {
        real sum_g = 0, sum_gx = 0;
        for (int64_t i = 0; i < m; ++i) {
          sum_g += gr[i];
          sum_gx += gr[i] * (plane[i] - mc) * ic;
        }
        if (gg) gg[ch] += sum_gx;
        if (gb) gb[ch] += sum_g;
      }
    }
  });
}

// ---- resampling ----

namespace detail {

struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<real> w1;
};

// Endpoint-aligned mapping: output sample j reads source j*(n-1)/(no-1), so
// the first and last samples coincide with the input border.
inline LerpAxis lerp_axis(int64_t n, int64_t no) {
  LerpAxis ax;
  ax.i0.resize(no);
  ax.i1.resize(no);
  ax.w1.resize(no);
  for (int64_t j = 0; j < no; ++j) {
    real src = no > 1
        ? static_cast<real>(j) * static_cast<real>(n - 1) /
              static_cast<real>(no - 1)
        : real(0);
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    int64_t i1 = std::min(i0 + 1, n - 1);
    ax.i0[j] = i0;
    ax.i1[j] = i1;
    ax.w1[j] = src - static_cast<real>(i0);
  }
  return ax;
}

}  // namespace detail

// Bilinear resize of (C,H,W) to (C,ho,wo); handles both up and down scaling.
inline Tensor bilinear_resize(const Tensor& x, int64_t ho, int64_t wo) {
  require(x.rank() == 3, "bilinear_resize: expected (C,H,W), got " +
          shape_str(x.shape()));
  require(ho >= 1 && wo >= 1, "bilinear_resize: output must be non-empty");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (ho == h && wo == w) return reshape(x, x.shape());
  auto ay = std::make_shared<detail::LerpAxis>(detail::lerp_axis(h, ho));
  auto ax = std::make_shared<detail::LerpAxis>(detail::lerp_axis(w, wo));
  auto out = detail::make_node(Shape{c, ho, wo});
  const auto& xv = x.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    const real* plane = xv.data() + ch * h * w;
    real* oplane = out->value.data() + ch * ho * wo;
    for (int64_t i = 0; i < ho; ++i) {
      const int64_t y0 = ay->i0[i], y1 = ay->i1[i];
      const real fy = ay->w1[i];
      for (int64_t j = 0; j < wo; ++j) {
        const int64_t x0 = ax->i0[j], x1 = ax->i1[j];
        const real fx = ax->w1[j];
        const real v00 = plane[y0 * w + x0];
        const real v01 = plane[y0 * w + x1];
        const real v10 = plane[y1 * w + x0];
        const real v11 = plane[y1 * w + x1];
        oplane[i * wo + j] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                             fy * ((1 - fx) * v10 + fx * v11);
      }
    }
  }
  return detail::finish("bilinear_resize", out, {x.node()},
                        [self = out.get(), xn = x.node(), c, h, w, ho, wo, ay,
                         ax] {
    const real* g = self->grad.data();
    real* gx = xn->grad_data();
    for (int64_t ch = 0; ch < c; ++ch) {
      real* gplane = gx + ch * h * w;
      const real* go = g + ch * ho * wo;
      for (int64_t i = 0; i < ho; ++i) {
        const int64_t y0 = ay->i0[i], y1 = ay->i1[i];
        const real fy = ay->w1[i];
        for (int64_t j = 0; j < wo; ++j) {
          const int64_t x0 = ax->i0[j], x1 = ax->i1[j];
          const real fx = ax->w1[j];
          const real gv = go[i * wo + j];
          gplane[y0 * w + x0] += gv * (1 - fy) * (1 - fx);
          gplane[y0 * w + x1] += gv * (1 - fy) * fx;
          gplane[y1 * w + x0] += gv * fy * (1 - fx);
          gplane[y1 * w + x1] += gv * fy * fx;
        }
      }
    }
  });
}

inline Tensor bilinear_upsample(const Tensor& x, int64_t factor) {
  require(factor >= 1, "bilinear_upsample: factor must be >= 1");
  return bilinear_resize(x, x.dim(1) * factor, x.dim(2) * factor);
}

// ---- broadcast helpers ----

// out[r,c] = m[r,c] * v[c]; the per-column scale used to weight rays by depth.
inline Tensor colwise_scale(const Tensor& m, const Tensor& v) {
  require(m.rank() == 2 && v.rank() == 1 && v.dim(0) == m.dim(1),
          "colwise_scale: need (R,C) and (C), got " + shape_str(m.shape()) +
          " and " + shape_str(v.shape()));
  const int64_t r = m.dim(0), c = m.dim(1);
  auto out = detail::make_node(m.shape());
  const auto& mv = m.data();
  const auto& vv = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out->value[i * c + j] = mv[i * c + j] * vv[j];
  return detail::finish("colwise_scale", out, {m.node(), v.node()},
                        [self = out.get(), mn = m.node(), vn = v.node(), r, c] {
    const real* g = self->grad.data();
    if (mn->requires_grad) {
      real* gm = mn->grad_data();
      const real* vv = vn->value.data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gm[i * c + j] += g[i * c + j] * vv[j];
    }
    if (vn->requires_grad) {
      real* gvd = vn->grad_data();
      const real* mv = mn->value.data();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gvd[j] += g[i * c + j] * mv[i * c + j];
    }
  });
}

// out[r,c] = m[r,c] + v[r]; the per-row bias used to add translations.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require(m.rank() == 2 && v.rank() == 1 && v.dim(0) == m.dim(0),
          "add_rowvec: need (R,C) and (R), got " + shape_str(m.shape()) +
          " and " + shape_str(v.shape()));
  const int64_t r = m.dim(0), c = m.dim(1);
  auto out = detail::make_node(m.shape());
  const auto& mv = m.data();
  const auto& vv = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out->value[i * c + j] = mv[i * c + j] + vv[i];
  return detail::finish("add_rowvec", out, {m.node(), v.node()},
                        [self = out.get(), mn = m.node(), vn = v.node(), r, c] {
    const real* g = self->grad.data();
    if (mn->requires_grad) {
      real* gm = mn->grad_data();
      for (int64_t i = 0; i < r * c; ++i) gm[i] += g[i];
    }
    if (vn->requires_grad) {
      real* gvd = vn->grad_data();
      for (int64_t i = 0; i < r; ++i) {
        real acc = 0;
        for (int64_t j = 0; j < c; ++j) acc += g[i * c + j];
        gvd[i] += acc;
      }
    }
  });
}

// Per-column bias over (R,C) rows, the linear-layer broadcast.
inline Tensor add_colvec(const Tensor& m, const Tensor& v) {
  require(m.rank() == 2 && v.rank() == 1 && v.dim(0) == m.dim(1),
          "add_colvec: need (R,C) and (C), got " + shape_str(m.shape()) +
          " and " + shape_str(v.shape()));
  const int64_t r = m.dim(0), c = m.dim(1);
  auto out = detail::make_node(m.shape());
  const auto& mv = m.data();
  const auto& vv = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out->value[i * c + j] = mv[i * c + j] + vv[j];
  return detail::finish("add_colvec", out, {m.node(), v.node()},
                        [self = out.get(), mn = m.node(), vn = v.node(), r, c] {
    const real* g = self->grad.data();
    if (mn->requires_grad) {
      real* gm = mn->grad_data();
      for (int64_t i = 0; i < r * c; ++i) gm[i] += g[i];
    }
    if (vn->requires_grad) {
      real* gvd = vn->grad_data();
      for (int64_t j = 0; j < c; ++j) {
        real acc = 0;
        for (int64_t i = 0; i < r; ++i) acc += g[i * c + j];
        gvd[j] += acc;
      }
    }
  });
}

// Per-channel bias over (C,H,W), the conv-style broadcast.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 3 && b.rank() == 1 && b.dim(0) == x.dim(0),
          "add_channel_bias: need (C,H,W) and (C)");
  const int64_t c = x.dim(0), m = x.dim(1) * x.dim(2);
  auto out = detail::make_node(x.shape());
  const auto& xv = x.data();
  const auto& bv = b.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < m; ++i)
      out->value[ch * m + i] = xv[ch * m + i] + bv[ch];
  return detail::finish("add_channel_bias", out, {x.node(), b.node()},
                        [self = out.get(), xn = x.node(), bn = b.node(), c, m] {
    const real* g = self->grad.data();
    if (xn->requires_grad) {
      real* gx = xn->grad_data();
      for (int64_t i = 0; i < c * m; ++i) gx[i] += g[i];
    }
    if (bn->requires_grad) {
      real* gb = bn->grad_data();
      for (int64_t ch = 0; ch < c; ++ch) {
        real acc = 0;
        for (int64_t i = 0; i < m; ++i) acc += g[ch * m + i];
        gb[ch] += acc;
      }
    }
  });
}

}  // namespace sfmk

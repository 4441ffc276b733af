#pragma once

// Forward kernels over plain tensors. The tape calls these both when
// recording a node and when replaying it, so each must be a pure function
// of its inputs and attributes.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>

#include "winn/tensor.hpp"

namespace winn::kernels {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // log(1 + e^x) without overflow
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

/// C = op(A) * op(B) for rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  CMapMat ma(a.data(), static_cast<Eigen::Index>(a.dim(0)), static_cast<Eigen::Index>(a.dim(1)));
  CMapMat mb(b.data(), static_cast<Eigen::Index>(b.dim(0)), static_cast<Eigen::Index>(b.dim(1)));
  const std::size_t rows = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t cols = trans_b ? b.dim(0) : b.dim(1);
  Tensor out({rows, cols});
  MapMat mc(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (rows == 0 || cols == 0) return out;
  if (!trans_a && !trans_b) mc.noalias() = ma * mb;
  else if (trans_a && !trans_b) mc.noalias() = ma.transpose() * mb;
  else if (!trans_a && trans_b) mc.noalias() = ma * mb.transpose();
  else mc.noalias() = ma.transpose() * mb.transpose();
  return out;
}

/// Treat `x` as [outer, mid, inner] and sum over outer and inner -> [mid].
inline Tensor reduce(const Tensor& x, std::size_t outer, std::size_t mid, std::size_t inner) {
  Tensor out({mid});
  const double* p = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < mid; ++m) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += *p++;
      out[m] += s;
    }
  }
  return out;
}

/// Inverse of reduce: repeat a [mid] vector over outer and inner.
inline Tensor broadcast(const Tensor& v, const Shape& out_shape, std::size_t outer, std::size_t mid,
                        std::size_t inner) {
  Tensor out(out_shape);
  double* p = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t m = 0; m < mid; ++m) {
      const double val = v[m];
      for (std::size_t i = 0; i < inner; ++i) *p++ = val;
    }
  }
  return out;
}

namespace detail {

// cols[(c*k + a)*k + b, y*W + x] = img[c, y + a - pad, x + b - pad]
/// Unfolds one image into rows of `cols` (row stride `ld`, at least h*w).
inline void im2col(const double* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
                   double* cols, std::size_t ld) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        double* dst = cols + ((c * k + a) * k + b) * ld;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + a) - pad;
          double* row = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          const double* src = img + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + b) - pad;
            row[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

/// Loop-nest convolution; cheaper than im2col when there are few output channels.
inline void conv2d_direct(const Tensor& x, const Tensor& w, Tensor& out) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(wd);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t oi = 0; oi < o; ++oi) {
      double* dst = out.data() + (i * o + oi) * h * wd;
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* src = x.data() + (i * c + ci) * h * wd;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const double wv = w[((oi * c + ci) * k + a) * k + b];
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(a) - pad, dx = static_cast<std::ptrdiff_t>(b) - pad;
            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(W, W - dx);
            for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < std::min(H, H - dy); ++y) {
              double* drow = dst + y * W;
              const double* srow = src + (y + dy) * W + dx;
              for (std::ptrdiff_t xx = x0; xx < x1; ++xx) drow[xx] += wv * srow[xx];
            }
          }
      }
    }
}

/// Samples per im2col chunk so the unfolded buffer stays near 32 MB.
inline std::size_t im2col_chunk(std::size_t n, std::size_t ckk, std::size_t hw) {
  constexpr std::size_t kBudget = std::size_t{1} << 22;
  return std::max<std::size_t>(1, std::min(n, kBudget / std::max<std::size_t>(1, ckk * hw)));
}

}  // namespace detail

/// Stride-1 "same" cross-correlation. x: [N,C,H,W], w: [O,C,k,k] with odd k.
inline Tensor conv2d(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t hw = h * wd, ckk = c * k * k;
  Tensor out({n, o, h, wd});
  if (o <= 4) {
    detail::conv2d_direct(x, w, out);
    return out;
  }
  const std::size_t chunk = detail::im2col_chunk(n, ckk, hw);
  std::vector<double> cols(ckk * chunk * hw), prod(o * chunk * hw);
  CMapMat wm(w.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t nb = std::min(chunk, n - start), ld = nb * hw;
    for (std::size_t i = 0; i < nb; ++i)
      detail::im2col(x.data() + (start + i) * c * hw, c, h, wd, k, cols.data() + i * hw, ld);
    CMapMat cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(ld));
    MapMat pm(prod.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ld));
    pm.noalias() = wm * cm;
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t oi = 0; oi < o; ++oi)
        std::copy_n(prod.data() + oi * ld + i * hw, hw, out.data() + ((start + i) * o + oi) * hw);
  }
  return out;
}

/// Gradient of conv2d w.r.t. its filter: dw[o,c,a,b] = sum g[n,o,y,x] x[n,c,y+a-p,x+b-p].
inline Tensor conv_weight_grad(const Tensor& x, const Tensor& g, std::size_t k) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = g.dim(1);
  const std::size_t hw = h * wd, ckk = c * k * k;
  Tensor out({o, c, k, k});
  MapMat dw(out.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
  const std::size_t chunk = detail::im2col_chunk(n, ckk, hw);
  std::vector<double> cols(ckk * chunk * hw), gath(o * chunk * hw);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t nb = std::min(chunk, n - start), ld = nb * hw;
    for (std::size_t i = 0; i < nb; ++i) {
      detail::im2col(x.data() + (start + i) * c * hw, c, h, wd, k, cols.data() + i * hw, ld);
      for (std::size_t oi = 0; oi < o; ++oi)
        std::copy_n(g.data() + ((start + i) * o + oi) * hw, hw, gath.data() + oi * ld + i * hw);
    }
    CMapMat cm(cols.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(ld));
    CMapMat gm(gath.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ld));
    dw.noalias() += gm * cm.transpose();
  }
  return out;
}

/// [O,C,k,k] -> [C,O,k,k] with both spatial axes reversed. An involution.
inline Tensor flip_transpose(const Tensor& w) {
  const std::size_t o = w.dim(0), c = w.dim(1), k = w.dim(2);
  Tensor out({c, o, k, k});
  for (std::size_t oi = 0; oi < o; ++oi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
          out[((ci * o + oi) * k + (k - 1 - a)) * k + (k - 1 - b)] = w[((oi * c + ci) * k + a) * k + b];
  return out;
}

/// 2x2 stride-2 mean over [N,C,H,W].
inline Tensor avg_pool2(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * wo + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  }
  return out;
}

/// Nearest-neighbour x2 upsampling over [N,C,H,W].
inline Tensor upsample2(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  return out;
}

/// Row-wise log-sum-exp of [N,K] -> [N].
inline Tensor logsumexp_rows(const Tensor& x) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = x.data() + i * k;
    const double m = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(r[j] - m);
    out[i] = m + std::log(s);
  }
  return out;
}

/// Row-wise softmax of [N,K].
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = x.data() + i * k;
    double* o = out.data() + i * k;
    const double m = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (o[j] = std::exp(r[j] - m));
    for (std::size_t j = 0; j < k; ++j) o[j] /= s;
  }
  return out;
}

}  // namespace winn::kernels

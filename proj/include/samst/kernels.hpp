#pragma once

// Forward and backward numeric kernels on plain tensors. Everything here is
// single-threaded with a fixed reduction order, so results are bit-stable.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "samst/tensor.hpp"

namespace samst::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Forward sums over float data run in double and are rounded once.
template <class T>
using Accum = std::conditional_t<std::is_same_v<T, float>, double, T>;

struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride,
                                  std::size_t pad) {
  if (x.size() != 3) throw ShapeError("conv2d: input must be C x H x W, got " + shape_str(x));
  if (w.size() != 4) throw ShapeError("conv2d: weight must be Cout x Cin x k x k, got " + shape_str(w));
  if (w[1] != x[0]) {
    throw ShapeError("conv2d: weight expects " + std::to_string(w[1]) +
                     " input channels, input has " + std::to_string(x[0]));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x[0], x[1], x[2], w[0], w[2], w[3], stride, pad, 0, 0};
  if (x[1] + 2 * pad < w[2] || x[2] + 2 * pad < w[3]) {
    throw ShapeError("conv2d: kernel " + shape_str(w) + " larger than padded input " + shape_str(x));
  }
  g.out_h = (x[1] + 2 * pad - w[2]) / stride + 1;
  g.out_w = (x[2] + 2 * pad - w[3]) / stride + 1;
  return g;
}

// cols is (Cin*kh*kw) x (out_h*out_w).
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      for (std::size_t kx = 0; kx < g.k_w; ++kx, ++row) {
        T* dst = cols + row * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.in_h) &&
                                ix < static_cast<long>(g.in_w);
            dst[oy * g.out_w + ox] = inside ? x[(c * g.in_h + iy) * g.in_w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* gx) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      for (std::size_t kx = 0; kx < g.k_w; ++kx, ++row) {
        const T* src = cols + row * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
            gx[(c * g.in_h + iy) * g.in_w + ix] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0;
}

// Patch matrix for output rows [oy0, oy1): (Cin*kh*kw) x ((oy1-oy0)*out_w).
template <class T, class U>
void im2col_rows(const T* x, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, U* cols) {
  const std::size_t width = (oy1 - oy0) * g.out_w;
  const long in_h = static_cast<long>(g.in_h), in_w = static_cast<long>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      for (std::size_t kx = 0; kx < g.k_w; ++kx, ++row) {
        U* dst = cols + row * width;
        // Valid ox satisfy 0 <= ox*stride + kx - pad < in_w.
        const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
        const long st = static_cast<long>(g.stride);
        const long lo = off >= 0 ? 0 : (-off + st - 1) / st;
        const long hi = std::min(static_cast<long>(g.out_w), in_w - off <= 0 ? 0 : (in_w - off + st - 1) / st);
        for (std::size_t oy = oy0; oy < oy1; ++oy, dst += g.out_w) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= in_h || lo >= hi) {
            std::fill(dst, dst + g.out_w, U(0));
            continue;
          }
          const T* src = x + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          std::fill(dst, dst + lo, U(0));
          if (st == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * st + off];
          }
          std::fill(dst + hi, dst + g.out_w, U(0));
        }
      }
    }
  }
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         std::size_t stride, std::size_t pad) {
  using A = Accum<T>;
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
  if (b.rank() != 1 || b.dim(0) != g.out_c) {
    throw ShapeError("conv2d: bias must have " + std::to_string(g.out_c) + " entries, got " +
                     shape_str(b.shape()));
  }
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t patch = g.in_c * g.k_h * g.k_w;
  Tensor<T> y(Shape{g.out_c, g.out_h, g.out_w});
  const RowMat<A> wm = ConstMapMat<T>(w.data().data(), g.out_c, patch).template cast<A>();
  const Eigen::Matrix<A, Eigen::Dynamic, 1> bias =
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data().data(), g.out_c).template cast<A>();
  // Column blocks keep the patch matrix near 256k scalars.
  const std::size_t cap = std::max<std::size_t>(1, (1u << 18) / std::max<std::size_t>(1, patch));
  RowMat<A> acc;
  auto store = [&](std::size_t col0, std::size_t n) {
    StridedMat<T>(y.data().data() + col0, g.out_c, n, Eigen::OuterStride<>(plane)) =
        (acc.colwise() + bias).template cast<T>();
  };
  if (is_pointwise(g)) {
    for (std::size_t col0 = 0; col0 < plane; col0 += cap) {
      const std::size_t n = std::min(cap, plane - col0);
      acc.noalias() =
          wm * ConstStridedMat<T>(x.data().data() + col0, patch, n, Eigen::OuterStride<>(plane)).template cast<A>();
      store(col0, n);
    }
  } else {
    const std::size_t block = std::clamp<std::size_t>(cap / g.out_w, 1, g.out_h);
    std::vector<A> cols(patch * block * g.out_w);
    for (std::size_t oy0 = 0; oy0 < g.out_h; oy0 += block) {
      const std::size_t oy1 = std::min(g.out_h, oy0 + block), n = (oy1 - oy0) * g.out_w;
      im2col_rows(x.data().data(), g, oy0, oy1, cols.data());
      acc.noalias() = wm * ConstMapMat<A>(cols.data(), patch, n);
      store(oy0 * g.out_w, n);
    }
  }
  return y;
}

// Any of gx/gw/gb may be null when that cotangent is not needed.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     std::size_t stride, std::size_t pad, Tensor<T>* gx, Tensor<T>* gw,
                     Tensor<T>* gb) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t patch = g.in_c * g.k_h * g.k_w;
  ConstMapMat<T> gym(gy.data().data(), g.out_c, plane);
  ConstMapMat<T> wm(w.data().data(), g.out_c, patch);
  const bool pointwise = is_pointwise(g);
  std::vector<T> cols;
  if (gw && !pointwise) {
    cols.resize(patch * plane);
    im2col(x.data().data(), g, cols.data());
  }
  if (gw) {
    const T* cptr = pointwise ? x.data().data() : cols.data();
    MapMat<T>(gw->data().data(), g.out_c, patch).noalias() +=
        gym * ConstMapMat<T>(cptr, patch, plane).transpose();
  }
  if (gb) {
    for (std::size_t o = 0; o < g.out_c; ++o) {
      T s = 0;
      const T* row = gy.data().data() + o * plane;
      for (std::size_t i = 0; i < plane; ++i) s += row[i];
      (*gb)[o] += s;
    }
  }
  if (gx) {
    if (pointwise) {
      MapMat<T>(gx->data().data(), patch, plane).noalias() += wm.transpose() * gym;
    } else {
      std::vector<T> gcols(patch * plane);
      MapMat<T>(gcols.data(), patch, plane).noalias() = wm.transpose() * gym;
      col2im(gcols.data(), g, gx->data().data());
    }
  }
}

inline void check_depthwise(const Shape& x, const Shape& k, std::size_t groups) {
  if (x.size() != 3) throw ShapeError("depthwise_conv2d: input must be C x H x W, got " + shape_str(x));
  if (k.size() != 4 || k[1] != 1) {
    throw ShapeError("depthwise_conv2d: kernels must be C x 1 x kh x kw, got " + shape_str(k));
  }
  if (groups != x[0] || k[0] != x[0]) {
    throw ContractError("depthwise_conv2d: unsupported configuration (groups=" +
                        std::to_string(groups) + ", input channels=" + std::to_string(x[0]) +
                        ", kernels=" + std::to_string(k[0]) + "); only groups == C_in is supported");
  }
  if (k[2] % 2 == 0 || k[3] % 2 == 0) {
    throw ContractError("depthwise_conv2d: kernel size must be odd, got " + shape_str(k));
  }
}

template <class T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& k) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t kh = k.dim(2), kw = k.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  using A = Accum<T>;
  Tensor<T> y(x.shape());
  std::vector<A> acc(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = x.data().data() + c * H * W;
    const T* kc = k.data().data() + c * kh * kw;
    std::fill(acc.begin(), acc.end(), A(0));
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const long dy = static_cast<long>(ky) - ph;
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const long dx = static_cast<long>(kx) - pw;
        const A kv = kc[ky * kw + kx];
        const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, static_cast<long>(H) - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
        for (long yy = y0; yy < y1; ++yy) {
          A* arow = acc.data() + yy * W;
          const T* xrow = xc + (yy + dy) * static_cast<long>(W) + dx;
          for (long xx = x0; xx < x1; ++xx) arow[xx] += kv * A(xrow[xx]);
        }
      }
    }
    std::transform(acc.begin(), acc.end(), y.data().data() + c * H * W, [](A v) { return static_cast<T>(v); });
  }
  return y;
}

template <class T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& gy,
                        Tensor<T>* gx, Tensor<T>* gk) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t kh = k.dim(2), kw = k.dim(3);
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = x.data().data() + c * H * W;
    const T* kc = k.data().data() + c * kh * kw;
    const T* gyc = gy.data().data() + c * H * W;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const long dy = static_cast<long>(ky) - ph;
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const long dx = static_cast<long>(kx) - pw;
        const long y0 = std::max(0L, -dy), y1 = std::min<long>(H, static_cast<long>(H) - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
        T acc = 0;
        const T kv = kc[ky * kw + kx];
        for (long yy = y0; yy < y1; ++yy) {
          const T* grow = gyc + yy * W;
          const long src = (yy + dy) * static_cast<long>(W) + dx;
          if (gk) {
            const T* xrow = xc + src;
            for (long xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
          }
          if (gx) {
            T* gxrow = gx->data().data() + c * H * W + src;
            for (long xx = x0; xx < x1; ++xx) gxrow[xx] += kv * grow[xx];
          }
        }
        if (gk) (*gk)[c * kh * kw + ky * kw + kx] += acc;
      }
    }
  }
}

// Per-channel spatial statistics with population variance.
template <class T>
struct ChannelStats {
  std::vector<T> mean;
  std::vector<T> inv_std;  // 1 / sqrt(var + eps)
};

template <class T>
ChannelStats<T> channel_stats(const Tensor<T>& x, T eps) {
  if (x.rank() != 3) throw ShapeError("channel statistics need C x H x W, got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), N = x.dim(1) * x.dim(2);
  ChannelStats<T> s{std::vector<T>(C), std::vector<T>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = x.data().data() + c * N;
    T sum = 0;
    bool constant = true;
    for (std::size_t i = 0; i < N; ++i) {
      sum += p[i];
      constant = constant && p[i] == p[0];
    }
    // A constant channel gets its exact value as mean, so it normalizes to 0.
    const T mu = constant ? p[0] : sum / static_cast<T>(N);
    T sq = 0;
    for (std::size_t i = 0; i < N; ++i) sq += (p[i] - mu) * (p[i] - mu);
    s.mean[c] = mu;
    s.inv_std[c] = T(1) / std::sqrt(sq / static_cast<T>(N) + eps);
  }
  return s;
}

// Returns argmax indices (flat, into x) alongside the pooled tensor.
template <class T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::size_t>& argmax) {
  if (x.rank() != 3) throw ShapeError("maxpool2: input must be C x H x W, got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H % 2 || W % 2) throw ShapeError("maxpool2: spatial size must be even, got " + shape_str(x.shape()));
  Tensor<T> y(Shape{C, H / 2, W / 2});
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < H / 2; ++oy) {
      for (std::size_t ox = 0; ox < W / 2; ++ox, ++o) {
        std::size_t best = (c * H + 2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        argmax[o] = best;
        y[o] = x[best];
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> nearest_up2_forward(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("nearest_up2: input must be C x H x W, got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<T> y(Shape{C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t yy = 0; yy < 2 * H; ++yy)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
  return y;
}

template <class T>
void nearest_up2_backward(const Tensor<T>& gy, Tensor<T>& gx) {
  const std::size_t C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t yy = 0; yy < 2 * H; ++yy)
      for (std::size_t xx = 0; xx < 2 * W; ++xx) gx.at(c, yy / 2, xx / 2) += gy.at(c, yy, xx);
}

template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 1) throw ShapeError("linear: input must be a flat vector, got " + shape_str(x.shape()));
  if (w.rank() != 2 || w.dim(1) != x.dim(0)) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  const std::size_t out = w.dim(0), in = w.dim(1);
  Tensor<T> y(Shape{out});
  for (std::size_t j = 0; j < out; ++j) {
    Accum<T> s = b[j];
    const T* row = w.data().data() + j * in;
    for (std::size_t k = 0; k < in; ++k) s += Accum<T>(row[k]) * x[k];
    y[j] = static_cast<T>(s);
  }
  return y;
}

template <class T>
T stable_sigmoid(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace samst::kernels

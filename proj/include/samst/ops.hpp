#pragma once

// Differentiable operations. Each op computes its forward value with the
// kernels in kernels.hpp and records the matching backward rule on the tape.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "samst/autodiff.hpp"
#include "samst/kernels.hpp"

namespace samst::ops {

namespace detail {

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw ContractError(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape;
}

// Broadcast rule for binary ops: equal shapes, or rhs is a per-channel
// vector [C] expanded over the spatial dims of a C x H x W lhs.
enum class Broadcast { none, channel };

inline Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::none;
  if (a.size() == 3 && b.size() == 1 && b[0] == a[0]) return Broadcast::channel;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace detail

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  Tape<T>& tape = detail::same_tape(x, w, "conv2d");
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  if (xv.rank() == 4) {
    // Batched input: run each sample through the unbatched kernel.
    const std::size_t n = xv.dim(0);
    const Shape sample{xv.dim(1), xv.dim(2), xv.dim(3)};
    const std::size_t in_sz = shape_numel(sample);
    std::vector<T> out;
    Shape out_sample;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<T> xi(sample, std::vector<T>(xv.data().begin() + i * in_sz, xv.data().begin() + (i + 1) * in_sz));
      Tensor<T> yi = kernels::conv2d_forward(xi, wv, bv, stride, pad);
      out_sample = yi.shape();
      out.insert(out.end(), yi.data().begin(), yi.data().end());
    }
    Shape out_shape{n, out_sample[0], out_sample[1], out_sample[2]};
    return tape.record(
        "conv2d", Tensor<T>(out_shape, std::move(out)), {x.id, w.id, b.id},
        [stride, pad, sample, out_sample, n](Tape<T>& t, std::size_t self) {
          const auto& in = t.inputs(self);
          const Tensor<T>& xall = t.value(in[0]);
          const Tensor<T>& wt = t.value(in[1]);
          const Tensor<T>& gall = t.grad(self);
          const std::size_t in_sz = shape_numel(sample), out_sz = shape_numel(out_sample);
          for (std::size_t i = 0; i < n; ++i) {
            Tensor<T> xi(sample, std::vector<T>(xall.data().begin() + i * in_sz,
                                                xall.data().begin() + (i + 1) * in_sz));
            Tensor<T> gi(out_sample, std::vector<T>(gall.data().begin() + i * out_sz,
                                                    gall.data().begin() + (i + 1) * out_sz));
            Tensor<T> gxi(sample);
            kernels::conv2d_backward(xi, wt, gi, stride, pad,
                                     t.requires_grad(in[0]) ? &gxi : nullptr,
                                     t.requires_grad(in[1]) ? &t.grad(in[1]) : nullptr,
                                     t.requires_grad(in[2]) ? &t.grad(in[2]) : nullptr);
            if (t.requires_grad(in[0])) {
              Tensor<T>& gx = t.grad(in[0]);
              for (std::size_t k = 0; k < in_sz; ++k) gx[i * in_sz + k] += gxi[k];
            }
          }
        });
  }
  return tape.record("conv2d", kernels::conv2d_forward(xv, wv, bv, stride, pad), {x.id, w.id, b.id},
                     [stride, pad](Tape<T>& t, std::size_t self) {
                       const auto& in = t.inputs(self);
                       kernels::conv2d_backward(t.value(in[0]), t.value(in[1]), t.grad(self), stride, pad,
                                                t.requires_grad(in[0]) ? &t.grad(in[0]) : nullptr,
                                                t.requires_grad(in[1]) ? &t.grad(in[1]) : nullptr,
                                                t.requires_grad(in[2]) ? &t.grad(in[2]) : nullptr);
                     });
}

// Depthwise convolution whose kernels are a runtime input (typically the
// output of a hypernetwork). Zero padding (k-1)/2 keeps the spatial size.
template <class T>
Var<T> depthwise_conv2d_dynamic(Var<T> x, Var<T> kernels, std::size_t groups) {
  Tape<T>& tape = detail::same_tape(x, kernels, "depthwise_conv2d_dynamic");
  kernels::check_depthwise(x.shape(), kernels.shape(), groups);
  return tape.record("depthwise_conv2d", kernels::depthwise_forward(x.value(), kernels.value()),
                     {x.id, kernels.id}, [](Tape<T>& t, std::size_t self) {
                       const auto& in = t.inputs(self);
                       kernels::depthwise_backward(t.value(in[0]), t.value(in[1]), t.grad(self),
                                                   t.requires_grad(in[0]) ? &t.grad(in[0]) : nullptr,
                                                   t.requires_grad(in[1]) ? &t.grad(in[1]) : nullptr);
                     });
}

template <class T>
struct InstanceNormResult {
  Var<T> out;
  Tensor<T> mean;  // [C]
  Tensor<T> std;   // [C], sqrt(var + eps)
};

template <class T>
InstanceNormResult<T> instance_norm(Var<T> x, T eps) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const auto stats = kernels::channel_stats(xv, eps);
  const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  Tensor<T> y(xv.shape());
  Tensor<T> mean(Shape{C}), sd(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    mean[c] = stats.mean[c];
    sd[c] = T(1) / stats.inv_std[c];
    for (std::size_t i = 0; i < N; ++i) y[c * N + i] = (xv[c * N + i] - stats.mean[c]) * stats.inv_std[c];
  }
  Var<T> out = tape.record(
      "instance_norm", std::move(y), {x.id}, [inv = stats.inv_std, C, N](Tape<T>& t, std::size_t self) {
        const Tensor<T>& n = t.value(self);
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(t.inputs(self)[0]);
        for (std::size_t c = 0; c < C; ++c) {
          T sg = 0, sgn = 0;
          for (std::size_t i = 0; i < N; ++i) {
            sg += gy[c * N + i];
            sgn += gy[c * N + i] * n[c * N + i];
          }
          const T mg = sg / static_cast<T>(N), mgn = sgn / static_cast<T>(N);
          for (std::size_t i = 0; i < N; ++i) {
            gx[c * N + i] += inv[c] * (gy[c * N + i] - mg - n[c * N + i] * mgn);
          }
        }
      });
  return {out, std::move(mean), std::move(sd)};
}

// Per-channel spatial mean, [C].
template <class T>
Var<T> channel_mean(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("channel_mean: input must be C x H x W, got " + shape_str(xv.shape()));
  const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  Tensor<T> m(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    T s = 0;
    for (std::size_t i = 0; i < N; ++i) s += xv[c * N + i];
    m[c] = s / static_cast<T>(N);
  }
  return x.tape->record("channel_mean", std::move(m), {x.id}, [C, N](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t c = 0; c < C; ++c) {
      const T v = g[c] / static_cast<T>(N);
      for (std::size_t i = 0; i < N; ++i) gx[c * N + i] += v;
    }
  });
}

// Per-channel spatial standard deviation sqrt(var + eps), population variance.
template <class T>
Var<T> channel_std(Var<T> x, T eps) {
  const Tensor<T>& xv = x.value();
  const auto stats = kernels::channel_stats(xv, eps);
  const std::size_t C = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  Tensor<T> s(Shape{C});
  for (std::size_t c = 0; c < C; ++c) s[c] = T(1) / stats.inv_std[c];
  return x.tape->record("channel_std", std::move(s), {x.id},
                        [st = stats, C, N](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad(self);
                          const Tensor<T>& xv = t.value(t.inputs(self)[0]);
                          Tensor<T>& gx = t.grad(t.inputs(self)[0]);
                          for (std::size_t c = 0; c < C; ++c) {
                            const T k = g[c] * st.inv_std[c] / static_cast<T>(N);
                            for (std::size_t i = 0; i < N; ++i) gx[c * N + i] += k * (xv[c * N + i] - st.mean[c]);
                          }
                        });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, w, "linear");
  return tape.record("linear", kernels::linear_forward(x.value(), w.value(), b.value()), {x.id, w.id, b.id},
                     [](Tape<T>& t, std::size_t self) {
                       const auto& in = t.inputs(self);
                       const Tensor<T>& xv = t.value(in[0]);
                       const Tensor<T>& wv = t.value(in[1]);
                       const Tensor<T>& g = t.grad(self);
                       const std::size_t out = wv.dim(0), inn = wv.dim(1);
                       if (t.requires_grad(in[0])) {
                         Tensor<T>& gx = t.grad(in[0]);
                         for (std::size_t j = 0; j < out; ++j)
                           for (std::size_t k = 0; k < inn; ++k) gx[k] += wv[j * inn + k] * g[j];
                       }
                       if (t.requires_grad(in[1])) {
                         Tensor<T>& gw = t.grad(in[1]);
                         for (std::size_t j = 0; j < out; ++j)
                           for (std::size_t k = 0; k < inn; ++k) gw[j * inn + k] += g[j] * xv[k];
                       }
                       if (t.requires_grad(in[2])) t.grad(in[2]) += g;
                     });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  return x.tape->record("relu", std::move(y), {x.id}, [](Tape<T>& t, std::size_t self) {
    const Tensor<T>& xv = t.value(t.inputs(self)[0]);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v = kernels::stable_sigmoid(v);
  return x.tape->record("sigmoid", std::move(y), {x.id}, [](Tape<T>& t, std::size_t self) {
    const Tensor<T>& s = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= s;
  return x.tape->record("scale", std::move(y), {x.id}, [s](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

// a + sign * b, with the channel broadcast rule for b.
template <class T>
Var<T> add_scaled(Var<T> a, Var<T> b, T sign, const char* op) {
  Tape<T>& tape = detail::same_tape(a, b, op);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const auto kind = detail::broadcast_kind(av.shape(), bv.shape(), op);
  Tensor<T> y = av;
  const std::size_t plane = kind == detail::Broadcast::channel ? av.dim(1) * av.dim(2) : 1;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += sign * bv[i / plane];
  return tape.record(op, std::move(y), {a.id, b.id}, [sign, plane](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(in[0])) t.grad(in[0]) += g;
    if (t.requires_grad(in[1])) {
      Tensor<T>& gb = t.grad(in[1]);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / plane] += sign * g[i];
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return add_scaled(a, b, T(1), "add");
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return add_scaled(a, b, T(-1), "sub");
}

// Elementwise product; b may be a per-channel vector broadcast over H x W.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const auto kind = detail::broadcast_kind(av.shape(), bv.shape(), "mul");
  Tensor<T> y = av;
  const std::size_t plane = kind == detail::Broadcast::channel ? av.dim(1) * av.dim(2) : 1;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i / plane];
  return tape.record("mul", std::move(y), {a.id, b.id}, [plane](Tape<T>& t, std::size_t self) {
    const auto& in = t.inputs(self);
    const Tensor<T>& av = t.value(in[0]);
    const Tensor<T>& bv = t.value(in[1]);
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(in[0])) {
      Tensor<T>& ga = t.grad(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i / plane];
    }
    if (t.requires_grad(in[1])) {
      Tensor<T>& gb = t.grad(in[1]);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / plane] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> maxpool2(Var<T> x) {
  std::vector<std::size_t> argmax;
  Tensor<T> y = kernels::maxpool2_forward(x.value(), argmax);
  return x.tape->record("maxpool2", std::move(y), {x.id},
                        [argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad(self);
                          Tensor<T>& gx = t.grad(t.inputs(self)[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                        });
}

template <class T>
Var<T> nearest_up2(Var<T> x) {
  return x.tape->record("nearest_up2", kernels::nearest_up2_forward(x.value()), {x.id},
                        [](Tape<T>& t, std::size_t self) {
                          kernels::nearest_up2_backward(t.grad(self), t.grad(t.inputs(self)[0]));
                        });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->record("reshape", x.value().reshaped(std::move(shape)), {x.id},
                        [](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad(self);
                          Tensor<T>& gx = t.grad(t.inputs(self)[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

// Contiguous range [begin, begin + len) of a flat vector.
template <class T>
Var<T> slice(Var<T> x, std::size_t begin, std::size_t len) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 1 || begin + len > xv.size() || len == 0) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(len) + ") out of range for " +
                     shape_str(xv.shape()));
  }
  Tensor<T> y(Shape{len}, std::vector<T>(xv.data().begin() + begin, xv.data().begin() + begin + len));
  return x.tape->record("slice", std::move(y), {x.id}, [begin](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin + i] += g[i];
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  return x.tape->record("sum", Tensor<T>::scalar(s), {x.id}, [](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (auto& v : gx.data()) v += g;
  });
}

// Root-sum-square. The subgradient at an all-zero input is taken as zero.
template <class T>
Var<T> l2_norm(Var<T> x) {
  T sq = 0;
  for (T v : x.value().data()) sq += v * v;
  const T norm = std::sqrt(sq);
  return x.tape->record("l2_norm", Tensor<T>::scalar(norm), {x.id}, [norm](Tape<T>& t, std::size_t self) {
    if (norm == T(0)) return;
    const T k = t.grad(self)[0] / norm;
    const Tensor<T>& xv = t.value(t.inputs(self)[0]);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += k * xv[i];
  });
}

// Mean absolute value; sign(0) is taken as 0.
template <class T>
Var<T> mean_abs(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += std::abs(v);
  const std::size_t n = x.value().size();
  return x.tape->record("mean_abs", Tensor<T>::scalar(s / static_cast<T>(n)), {x.id},
                        [n](Tape<T>& t, std::size_t self) {
                          const T k = t.grad(self)[0] / static_cast<T>(n);
                          const Tensor<T>& xv = t.value(t.inputs(self)[0]);
                          Tensor<T>& gx = t.grad(t.inputs(self)[0]);
                          for (std::size_t i = 0; i < xv.size(); ++i) {
                            if (xv[i] > T(0)) gx[i] += k;
                            else if (xv[i] < T(0)) gx[i] -= k;
                          }
                        });
}

// Elementwise permutation out[i] = in[perm[i]]; used by the dihedral transforms.
template <class T>
Var<T> gather(Var<T> x, Shape out_shape, std::vector<std::size_t> perm, const char* op = "gather") {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(std::move(out_shape));
  if (perm.size() != y.size()) throw ShapeError(std::string(op) + ": permutation length mismatch");
  for (std::size_t i = 0; i < perm.size(); ++i) y[i] = xv[perm[i]];
  return x.tape->record(op, std::move(y), {x.id}, [perm = std::move(perm)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(t.inputs(self)[0]);
    for (std::size_t i = 0; i < perm.size(); ++i) gx[perm[i]] += g[i];
  });
}

}  // namespace samst::ops

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "samst/autodiff.hpp"
#include "samst/config.hpp"

namespace samst {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamState {
  AdamHyper hyper{};
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// Bias-corrected Adam over `params` (state slots follow the vector order).
// Gradients are zeroed afterwards. A non-finite gradient aborts before any
// parameter is touched.
template <std::floating_point T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr) {
  for (const auto* p : params) {
    if (!p->grad.all_finite()) throw NumericError("adam_step: non-finite gradient for '" + p->name + "'");
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed between steps");
  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    if (m.shape() != p.value.shape()) throw ShapeError("adam_step: moment shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p.value[i] = static_cast<T>(p.value[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps));
    }
    p.zero_grad();
  }
}

// lr0 * 0.5^floor(iteration / lr_halve_every)
inline double lr_at(std::size_t iteration, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(0.5, static_cast<double>(iteration / cfg.lr_halve_every));
}

}  // namespace samst

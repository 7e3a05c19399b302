#pragma once

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "samst/ops.hpp"

namespace testutil {

using samst::Parameter;
using samst::Tape;
using samst::Tensor;
using samst::Var;

using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradReport {
  double max_rel = 0;
  std::size_t checked = 0;
};

// Compares backprop against central differences for every element of every
// parameter. `build` must return a scalar.
inline GradReport check_gradients(const std::vector<Parameter<double>*>& params, const Builder& build,
                                  double h = 1e-4) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto* p : params) vars.push_back(tape.param(*p));
    tape.backward(build(tape, vars));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (auto* p : params) vars.push_back(tape.param(*p));
    return build(tape, vars).value()[0];
  };
  GradReport r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double numeric = oracle::central_difference(eval, &p->value.data()[i], h);
      r.max_rel = std::max(r.max_rel, oracle::relative_error(p->grad[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

// sum(out * R) for a fixed random R, so every output element matters.
inline Var<double> project(Var<double> out, std::uint64_t seed = 99) {
  samst::CounterRng rng(seed);
  return samst::ops::sum(samst::ops::mul(out, out.tape->constant(Tensor<double>::uniform(out.shape(), rng, -1, 1))));
}

}  // namespace testutil

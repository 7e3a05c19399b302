#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "samst/backbone.hpp"
#include "samst/losses.hpp"
#include "samst/model.hpp"
#include "samst/synthetic.hpp"

namespace samst {

struct GradcheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel = 0;
  double max_abs_grad = 0;
  double max_abs_diff = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> params;
  double max_rel = 0;
  std::size_t checked = 0;
  double seconds = 0;
};

// Small double-precision network for finite-difference checks: 8x8 inputs,
// two style blocks, 8 bottleneck channels.
inline NetworkConfig gradcheck_config() {
  NetworkConfig c;
  c.encoder_channels = {4, 6, 8};
  c.sab_count = 2;
  c.mlp_hidden = 12;
  return c;
}

// Compares backprop against central differences on the full training loss
// for every network weight, one style representation and f_0.
inline GradcheckReport run_gradcheck(std::uint64_t seed = 7, double h = 1e-6) {
  const auto start = std::chrono::steady_clock::now();
  CounterRng root(seed);
  auto model = SamstModel<double>::initialize(gradcheck_config(), root.split(0).at(0));
  model.weights().set_trainable(true);
  const auto bb = FeatureBackbone<double>::test_backbone();
  const auto content = synthetic::content<double>(root.split(1), 8, 8);
  const auto stats = style_statistics(bb, synthetic::style<double>(root.split(2), 16, seed));
  CounterRng rep_rng = root.split(3);
  auto rep = [&] {
    Tensor<double> t(Shape{model.config().style_dim});
    for (auto& v : t.data()) v = static_cast<float>(rep_rng.uniform(0.5, 1.5));
    return t;
  };
  Parameter<double> f1("style", rep()), f0("identity", rep());
  std::vector<Parameter<double>*> params;
  for (auto& p : model.weights().all()) params.push_back(&p);
  params.push_back(&f1);
  params.push_back(&f0);

  auto loss = [&](Tape<double>& tape) {
    const auto b = model.bind(tape);
    std::vector<LossSample<double>> batch{
        {tape.constant(content), tape.param(f1), &stats, {DihedralTransform(3), DihedralTransform(5)}}};
    return total_loss<double>(model, b, bb, batch, tape.param(f0), LossWeights{}).total;
  };
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return loss(tape).value()[0];
  };

  GradcheckReport report;
  for (auto* p : params) {
    GradcheckEntry e{p->name, p->value.size(), 0, 0, 0};
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * h), analytic = p->grad[i];
      const double diff = std::abs(analytic - numeric);
      // Differences below 1e-7 are finite-difference noise and count as exact.
      const double rel = diff < 1e-7 ? 0.0 : diff / std::max(std::abs(analytic), std::abs(numeric));
      e.max_rel = std::max(e.max_rel, rel);
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(analytic));
      e.max_abs_diff = std::max(e.max_abs_diff, diff);
    }
    report.max_rel = std::max(report.max_rel, e.max_rel);
    report.checked += e.count;
    report.params.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace samst

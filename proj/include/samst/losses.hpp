#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "samst/backbone.hpp"
#include "samst/config.hpp"
#include "samst/dihedral.hpp"
#include "samst/model.hpp"

namespace samst {

inline constexpr double kStatEps = 1e-5;

// Per-tap channel mean and std of a style image's features. Style images are
// fixed, so these are computed once per style.
template <std::floating_point T>
struct StyleStats {
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> taps;
};

template <std::floating_point T>
StyleStats<T> style_statistics(const FeatureBackbone<T>& backbone, const Tensor<T>& style_image) {
  Tape<T> tape(false);
  StyleStats<T> s;
  for (const auto& [name, f] : backbone.extract(tape.constant(style_image), backbone.style_taps())) {
    s.taps.emplace(name, std::make_pair(ops::channel_mean(f).value(),
                                        ops::channel_std(f, static_cast<T>(kStatEps)).value()));
  }
  return s;
}

template <std::floating_point T>
Var<T> sum_scalars(Tape<T>& tape, const std::vector<Var<T>>& terms) {
  if (terms.empty()) return tape.constant(Tensor<T>::scalar(T(0)));
  Var<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return acc;
}

// Sum over content taps of the root-sum-square feature difference.
template <std::floating_point T>
Var<T> content_loss(Var<T> stylized, Var<T> content, const FeatureBackbone<T>& backbone) {
  if (stylized.shape() != content.shape()) {
    throw ShapeError("content_loss: image sizes differ " + shape_str(stylized.shape()) + " vs " +
                     shape_str(content.shape()));
  }
  auto fi = backbone.extract(stylized, backbone.content_taps());
  auto fc = backbone.extract(content, backbone.content_taps());
  std::vector<Var<T>> terms;
  for (const auto& tap : backbone.content_taps()) terms.push_back(ops::l2_norm(ops::sub(fi.at(tap), fc.at(tap))));
  return sum_scalars(*stylized.tape, terms);
}

template <std::floating_point T>
Var<T> style_loss(Var<T> stylized, const StyleStats<T>& target, const FeatureBackbone<T>& backbone) {
  auto fi = backbone.extract(stylized, backbone.style_taps());
  Tape<T>& tape = *stylized.tape;
  std::vector<Var<T>> terms;
  for (const auto& tap : backbone.style_taps()) {
    const auto it = target.taps.find(tap);
    if (it == target.taps.end()) throw ContractError("style_loss: target statistics missing tap '" + tap + "'");
    Var<T> mu = ops::channel_mean(fi.at(tap));
    Var<T> sd = ops::channel_std(fi.at(tap), static_cast<T>(kStatEps));
    terms.push_back(ops::l2_norm(ops::sub(mu, tape.constant(it->second.first))));
    terms.push_back(ops::l2_norm(ops::sub(sd, tape.constant(it->second.second))));
  }
  return sum_scalars(tape, terms);
}

// Sum over style taps of ||mu(F_I) - mu(F_s)|| + ||sigma(F_I) - sigma(F_s)||.
// Spatial sizes of the two images may differ.
template <std::floating_point T>
Var<T> style_loss(Var<T> stylized, Var<T> style, const FeatureBackbone<T>& backbone) {
  auto fs = backbone.extract(style, backbone.style_taps());
  auto fi = backbone.extract(stylized, backbone.style_taps());
  Tape<T>& tape = *stylized.tape;
  std::vector<Var<T>> terms;
  for (const auto& tap : backbone.style_taps()) {
    const auto eps = static_cast<T>(kStatEps);
    terms.push_back(ops::l2_norm(ops::sub(ops::channel_mean(fi.at(tap)), ops::channel_mean(fs.at(tap)))));
    terms.push_back(ops::l2_norm(ops::sub(ops::channel_std(fi.at(tap), eps), ops::channel_std(fs.at(tap), eps))));
  }
  return sum_scalars(tape, terms);
}

template <std::floating_point T>
Var<T> reconstruction_loss(Var<T> reconstructed, Var<T> content) {
  if (reconstructed.shape() != content.shape()) {
    throw ShapeError("reconstruction_loss: shape mismatch " + shape_str(reconstructed.shape()) + " vs " +
                     shape_str(content.shape()));
  }
  return ops::l2_norm(ops::sub(reconstructed, content));
}

inline void check_transforms_fit(const Shape& image, const std::vector<DihedralTransform>& transforms) {
  if (image.size() == 3 && image[1] != image[2]) {
    for (const auto& t : transforms) {
      if (t.swaps_axes()) {
        throw ContractError("geometric_loss: transform " + std::to_string(t.index()) +
                            " rotates by 90 degrees and needs a square image, got " + shape_str(image));
      }
    }
  }
}

// sum_t mean|S(c) - t^-1(S(t(c)))| + mean|S(t(c)) - t(S(c))|. Pass
// `stylized` to reuse an already computed S(c, f).
template <std::floating_point T>
Var<T> geometric_loss(const SamstModel<T>& model, const typename SamstModel<T>::Bound& bound,
                      const std::vector<AdaptedBlockVars<T>>& adapted, Var<T> content,
                      const std::vector<DihedralTransform>& transforms, std::optional<Var<T>> stylized = {}) {
  check_transforms_fit(content.shape(), transforms);
  Var<T> base = stylized ? *stylized : model.stylize_adapted(bound, content, adapted);
  std::vector<Var<T>> terms;
  for (const auto& t : transforms) {
    Var<T> moved = model.stylize_adapted(bound, t.apply(content), adapted);
    terms.push_back(ops::mean_abs(ops::sub(base, t.inverse().apply(moved))));
    terms.push_back(ops::mean_abs(ops::sub(moved, t.apply(base))));
  }
  return sum_scalars(*content.tape, terms);
}

template <std::floating_point T>
Var<T> geometric_loss(const SamstModel<T>& model, const typename SamstModel<T>::Bound& bound, Var<T> content,
                      Var<T> f, const std::vector<DihedralTransform>& transforms) {
  return geometric_loss(model, bound, model.adapt(bound, f), content, transforms);
}

// One training sample: content crop, its style representation and the
// precomputed statistics of the paired style image.
template <std::floating_point T>
struct LossSample {
  Var<T> content;
  Var<T> style_rep;
  const StyleStats<T>* style = nullptr;
  std::vector<DihedralTransform> transforms;
};

template <std::floating_point T>
struct LossTerms {
  Var<T> total;
  double content = 0, style = 0, reconstruction = 0, geometric = 0;  // batch means, unweighted
};

// Batch mean of lc*Lc + ls*Ls + lae*Lae + lgeo*Lgeo. The reconstruction term
// runs only when `identity_rep` is given. Terms with zero weight are skipped.
template <std::floating_point T>
LossTerms<T> total_loss(const SamstModel<T>& model, const typename SamstModel<T>::Bound& bound,
                        const FeatureBackbone<T>& backbone, std::span<const LossSample<T>> batch,
                        std::optional<Var<T>> identity_rep, const LossWeights& w) {
  if (batch.empty()) throw ContractError("total_loss: empty batch");
  w.validate();
  Tape<T>& tape = *batch.front().content.tape;
  LossTerms<T> out;
  std::vector<Var<T>> per_sample;
  std::optional<std::vector<AdaptedBlockVars<T>>> identity_adapted;
  if (identity_rep && w.reconstruction > 0) identity_adapted = model.adapt(bound, *identity_rep);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    std::vector<Var<T>> terms;
    const auto adapted = model.adapt(bound, s.style_rep);
    std::optional<Var<T>> stylized;
    if (w.content > 0 || w.style > 0 || w.geometric > 0) stylized = model.stylize_adapted(bound, s.content, adapted);
    if (w.content > 0) {
      Var<T> lc = content_loss(*stylized, s.content, backbone);
      out.content += lc.value()[0] * inv_b;
      terms.push_back(ops::scale(lc, static_cast<T>(w.content)));
    }
    if (w.style > 0) {
      if (!s.style) throw ContractError("total_loss: sample is missing style statistics");
      Var<T> ls = style_loss(*stylized, *s.style, backbone);
      out.style += ls.value()[0] * inv_b;
      terms.push_back(ops::scale(ls, static_cast<T>(w.style)));
    }
    if (identity_adapted) {
      Var<T> lae = reconstruction_loss(model.stylize_adapted(bound, s.content, *identity_adapted), s.content);
      out.reconstruction += lae.value()[0] * inv_b;
      terms.push_back(ops::scale(lae, static_cast<T>(w.reconstruction)));
    }
    if (w.geometric > 0 && !s.transforms.empty()) {
      Var<T> lg = geometric_loss(model, bound, adapted, s.content, s.transforms, stylized);
      out.geometric += lg.value()[0] * inv_b;
      terms.push_back(ops::scale(lg, static_cast<T>(w.geometric)));
    }
    per_sample.push_back(sum_scalars(tape, terms));
  }
  out.total = ops::scale(sum_scalars(tape, per_sample), static_cast<T>(inv_b));
  return out;
}

}  // namespace samst

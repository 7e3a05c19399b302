#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "samst/adam.hpp"
#include "samst/archive.hpp"
#include "samst/image.hpp"
#include "samst/losses.hpp"
#include "samst/style.hpp"

namespace samst {

template <std::floating_point T>
struct NamedImage {
  std::string id;
  std::string name;
  Tensor<T> image;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::string style;  // incremental runs only
  double lr = 0;
  double total = 0, content = 0, style_loss = 0, reconstruction = 0, geometric = 0;
  double wall_ms = 0;
};

inline void to_json(nlohmann::json& j, const IterationRecord& r) {
  j = {{"iteration", r.iteration}, {"lr", r.lr},         {"total", r.total},
       {"content", r.content},     {"style", r.style_loss}, {"reconstruction", r.reconstruction},
       {"geometric", r.geometric}, {"wall_ms", r.wall_ms}};
  if (!r.style.empty()) j["style_id"] = r.style;
}

struct StyleProgress {
  std::string id;
  std::size_t iterations = 0;
  double first_loss = 0;  // mean total loss of the first min(50, n) iterations
  double last_loss = 0;   // and of the last min(50, n)
};

struct TrainReport {
  std::vector<IterationRecord> records;
  std::vector<StyleProgress> styles;
  std::string final_digest;
  double wall_ms = 0;
};

// Mean of `total` over records [begin, end).
inline double mean_total(const std::vector<IterationRecord>& r, std::size_t begin, std::size_t end) {
  if (begin >= end || end > r.size()) throw ContractError("mean_total: bad record range");
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += r[i].total;
  return s / static_cast<double>(end - begin);
}

template <std::floating_point T>
struct Minibatch {
  std::vector<Tensor<T>> contents;
  std::vector<std::size_t> styles;
  std::vector<std::vector<DihedralTransform>> transforms;
};

// b square crops from random contents, each paired with a uniformly drawn
// style index. The identity transform contributes nothing to the geometric
// loss, so all8 uses the seven others and sample1 draws one of them.
template <std::floating_point T>
Minibatch<T> sample_minibatch(CounterRng& rng, const std::vector<Tensor<T>>& contents, std::size_t n_styles,
                              std::size_t b, std::size_t crop_size, GeoMode geo) {
  if (contents.empty()) throw ContractError("sample_minibatch: no content images");
  if (n_styles == 0) throw ContractError("sample_minibatch: no styles");
  if (b == 0) throw ContractError("sample_minibatch: batch size must be positive");
  Minibatch<T> mb;
  for (std::size_t j = 0; j < b; ++j) {
    const auto& c = contents[rng.below(contents.size())];
    if (c.rank() != 3 || c.dim(1) < crop_size || c.dim(2) < crop_size) {
      throw ShapeError("content image " + shape_str(c.shape()) + " is smaller than the " +
                       std::to_string(crop_size) + " px crop");
    }
    const std::size_t y0 = rng.below(c.dim(1) - crop_size + 1);
    const std::size_t x0 = rng.below(c.dim(2) - crop_size + 1);
    mb.contents.push_back(crop(c, y0, x0, crop_size, crop_size));
    mb.styles.push_back(rng.below(n_styles));
    std::vector<DihedralTransform> ts;
    if (geo == GeoMode::all8) {
      for (int t = 1; t < 8; ++t) ts.emplace_back(t);
    } else {
      ts.emplace_back(static_cast<int>(1 + rng.below(7)));
    }
    mb.transforms.push_back(std::move(ts));
  }
  return mb;
}

// Scales content images up so that a crop fits; larger images stay as they are.
template <std::floating_point T>
Tensor<T> fit_content(const Tensor<T>& img, std::size_t crop_size) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h >= crop_size && w >= crop_size) return img;
  const double s = static_cast<double>(crop_size) / static_cast<double>(std::min(h, w));
  return resize_bilinear(img, std::max(crop_size, static_cast<std::size_t>(std::ceil(h * s))),
                         std::max(crop_size, static_cast<std::size_t>(std::ceil(w * s))));
}

template <std::floating_point T>
Tensor<T> fit_style(const Tensor<T>& img, std::size_t size) {
  return resize_bilinear(img, size, size);
}

template <std::floating_point T>
struct TrainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  // Called with the number of completed iterations, every checkpoint_every
  // iterations and after the last one.
  std::function<void(std::size_t, const SamstModel<T>&, const StyleCodebook&)> on_checkpoint;
};

// Every style starts from the all-ones representation, as does f_0.
template <std::floating_point T>
StyleCodebook initial_codebook(const std::vector<NamedImage<T>>& styles, std::size_t dim) {
  StyleCodebook cb(dim);
  for (const auto& s : styles) cb.add(StyleRepresentation::ones(s.id, s.name, dim));
  return cb;
}

namespace detail {

template <std::floating_point T>
Parameter<T> rep_parameter(const StyleRepresentation& r) {
  return Parameter<T>("style." + r.id, SamstModel<T>::rep_tensor(r));
}

template <std::floating_point T>
void store_rep(const Parameter<T>& p, StyleRepresentation& r) {
  for (std::size_t k = 0; k < r.values.size(); ++k) r.values[k] = static_cast<float>(p.value[k]);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline StyleProgress progress(const std::string& id, const std::vector<IterationRecord>& r, std::size_t begin,
                              std::size_t end) {
  StyleProgress p{id, end - begin, 0, 0};
  if (end > begin) {
    const std::size_t n = std::min<std::size_t>(50, end - begin);
    p.first_loss = mean_total(r, begin, begin + n);
    p.last_loss = mean_total(r, end - n, end);
  }
  return p;
}

}  // namespace detail

// Loss of the batch drawn for `iteration`, evaluated on the given state
// without touching it. Training reports the same quantity before each update.
template <std::floating_point T>
LossTerms<T> evaluate_iteration(Tape<T>& tape, const SamstModel<T>& model, const FeatureBackbone<T>& backbone,
                                const std::vector<Tensor<T>>& contents, const std::vector<StyleStats<T>>& stats,
                                const std::vector<Var<T>>& reps, std::optional<Var<T>> identity,
                                const typename SamstModel<T>::Bound& bound, const TrainConfig& cfg,
                                std::size_t iteration, std::size_t stream = 0) {
  CounterRng rng = CounterRng(cfg.seed).split(stream).split(iteration);
  auto mb = sample_minibatch(rng, contents, reps.size(), cfg.batch_size, cfg.content_crop, cfg.geo_mode);
  std::vector<LossSample<T>> batch;
  for (std::size_t j = 0; j < mb.contents.size(); ++j) {
    batch.push_back(LossSample<T>{tape.constant(std::move(mb.contents[j])), reps[mb.styles[j]],
                                  &stats[mb.styles[j]], std::move(mb.transforms[j])});
  }
  return total_loss<T>(model, bound, backbone, batch, identity, cfg.loss_weights);
}

template <std::floating_point T>
std::vector<StyleStats<T>> style_statistics(const FeatureBackbone<T>& backbone, const std::vector<NamedImage<T>>& styles,
                                            std::size_t size) {
  std::vector<StyleStats<T>> out;
  for (const auto& s : styles) out.push_back(style_statistics(backbone, fit_style(s.image, size)));
  return out;
}

// Joint training of the network, the style representations and f_0. The
// codebook must hold an entry for every style id; its values are updated in
// place, as are the model weights. A non-finite loss or gradient restores the
// last checkpointed state and rethrows.
template <std::floating_point T>
TrainReport train_general(const TrainConfig& cfg, const std::vector<Tensor<T>>& contents,
                          const std::vector<NamedImage<T>>& styles, SamstModel<T>& model, StyleCodebook& codebook,
                          const FeatureBackbone<T>& backbone, const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (styles.empty()) throw ContractError("train_general: no style images");
  if (contents.empty()) throw ContractError("train_general: no content images");
  if (codebook.dim() != model.config().style_dim) throw ShapeError("train_general: codebook dimension mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  if (cfg.iterations == 0) return report;

  std::vector<Tensor<T>> pool;
  for (const auto& c : contents) pool.push_back(fit_content(c, cfg.content_crop));
  const auto stats = style_statistics(backbone, styles, cfg.style_size);

  Parameter<T> f0 = detail::rep_parameter<T>(codebook.identity());
  std::vector<Parameter<T>> reps;
  for (const auto& s : styles) reps.push_back(detail::rep_parameter<T>(codebook.at(s.id)));

  std::vector<Parameter<T>*> params;
  model.weights().set_trainable(true);
  for (auto& p : model.weights().all()) params.push_back(&p);
  params.push_back(&f0);
  for (auto& r : reps) params.push_back(&r);
  model.weights().zero_grad();

  auto write_back = [&](StyleCodebook& cb) {
    detail::store_rep(f0, cb.identity());
    for (std::size_t k = 0; k < styles.size(); ++k) {
      for (auto& e : cb.entries())
        if (e.id == styles[k].id) detail::store_rep(reps[k], e);
    }
  };

  AdamState<T> adam;
  struct Snapshot {
    std::size_t done;
    SamstModel<T> model;
    StyleCodebook codebook;
  };
  Snapshot good{0, model, codebook};

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    rec.lr = lr_at(it, cfg);
    try {
      Tape<T> tape;
      const auto bound = model.bind(tape);
      std::vector<Var<T>> rep_vars;
      for (auto& r : reps) rep_vars.push_back(tape.param(r));
      const Var<T> id_var = tape.param(f0);
      auto terms = evaluate_iteration<T>(tape, model, backbone, pool, stats, rep_vars, id_var, bound, cfg, it);
      rec.total = terms.total.value()[0];
      rec.content = terms.content;
      rec.style_loss = terms.style;
      rec.reconstruction = terms.reconstruction;
      rec.geometric = terms.geometric;
      tape.backward(terms.total);
      adam_step(params, adam, rec.lr);
    } catch (const NumericError& e) {
      model = good.model;
      codebook = good.codebook;
      throw NumericError("training diverged at iteration " + std::to_string(it) + " (" + e.what() +
                         "); state restored to the checkpoint after iteration " + std::to_string(good.done));
    }
    rec.wall_ms = detail::elapsed_ms(t0);
    report.records.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);

    const std::size_t done = it + 1;
    if (done == cfg.iterations || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)) {
      write_back(codebook);
      codebook.set_fingerprint(model_fingerprint(model));
      good = Snapshot{done, model, codebook};
      if (hooks.on_checkpoint) hooks.on_checkpoint(done, model, codebook);
    }
  }
  report.final_digest = codebook.fingerprint();
  report.styles.push_back(detail::progress("*", report.records, 0, report.records.size()));
  report.wall_ms = detail::elapsed_ms(t0);
  return report;
}

struct IncrementalResult {
  StyleCodebook codebook;
  TrainReport report;
};

// Learns one representation per new style against the frozen network. Each
// style is optimised on its own with the batch stream derived from the seed
// alone, so the result for a style does not depend on which other styles are
// added in the same call. Existing entries are copied through untouched.
template <std::floating_point T>
IncrementalResult train_incremental(const TrainConfig& cfg, const std::vector<Tensor<T>>& contents,
                                    const std::vector<NamedImage<T>>& new_styles, const SamstModel<T>& model,
                                    const StyleCodebook& codebook, const FeatureBackbone<T>& backbone,
                                    const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (contents.empty()) throw ContractError("train_incremental: no content images");
  if (codebook.dim() != model.config().style_dim) throw ShapeError("train_incremental: codebook dimension mismatch");
  std::set<std::string> seen;
  for (const auto& s : new_styles) {
    if (s.id.empty()) throw CodebookError("style id must not be empty");
    if (codebook.contains(s.id) || !seen.insert(s.id).second) {
      throw CodebookError("style id '" + s.id + "' already exists in the codebook");
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  IncrementalResult out{codebook, {}};
  std::vector<Tensor<T>> pool;
  for (const auto& c : contents) pool.push_back(fit_content(c, cfg.content_crop));
  LossWeights weights = cfg.loss_weights;
  weights.reconstruction = 0;
  TrainConfig run = cfg;
  run.loss_weights = weights;

  for (const auto& s : new_styles) {
    const std::vector<StyleStats<T>> stats{style_statistics(backbone, fit_style(s.image, cfg.style_size))};
    Parameter<T> rep = detail::rep_parameter<T>(StyleRepresentation::ones(s.id, s.name, codebook.dim()));
    AdamState<T> adam;
    const std::size_t begin = out.report.records.size();
    for (std::size_t it = 0; it < cfg.incremental_iterations; ++it) {
      IterationRecord rec;
      rec.iteration = it;
      rec.style = s.id;
      rec.lr = lr_at(it, cfg);
      Tape<T> tape;
      const auto bound = model.bind_frozen(tape);
      const std::vector<Var<T>> rep_vars{tape.param(rep)};
      auto terms = evaluate_iteration<T>(tape, model, backbone, pool, stats, rep_vars, std::nullopt, bound, run, it, 1);
      rec.total = terms.total.value()[0];
      rec.content = terms.content;
      rec.style_loss = terms.style;
      rec.geometric = terms.geometric;
      tape.backward(terms.total);
      adam_step<T>({&rep}, adam, rec.lr);
      rec.wall_ms = detail::elapsed_ms(t0);
      out.report.records.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);
    }
    StyleRepresentation learned = StyleRepresentation::ones(s.id, s.name, codebook.dim());
    detail::store_rep(rep, learned);
    out.codebook.add(std::move(learned));
    out.report.styles.push_back(detail::progress(s.id, out.report.records, begin, out.report.records.size()));
  }
  out.report.final_digest = codebook.fingerprint();
  out.report.wall_ms = detail::elapsed_ms(t0);
  if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.incremental_iterations, model, out.codebook);
  return out;
}

}  // namespace samst

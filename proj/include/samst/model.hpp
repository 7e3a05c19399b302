#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "samst/autodiff.hpp"
#include "samst/config.hpp"
#include "samst/ops.hpp"
#include "samst/rng.hpp"
#include "samst/style.hpp"

namespace samst {

// Named parameter set in canonical (construction) order.
template <std::floating_point T>
class ModelWeights {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Parameter<T>& at(const std::string& name) { return params_[index_of(name)]; }
  const Parameter<T>& at(const std::string& name) const { return params_[index_of(name)]; }

  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& p : params_) p.trainable = on;
  }

  template <std::floating_point U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

struct ConvLayerSpec {
  std::string name;
  std::size_t in, out, kernel;
};

struct HeadSpec {
  std::string name;
  std::size_t in, hidden, out;
};

inline std::vector<ConvLayerSpec> encoder_layers(const NetworkConfig& c) {
  const auto& ch = c.encoder_channels;
  return {{"encoder.conv0", 3, ch[0], c.edge_kernel},
          {"encoder.conv1", ch[0], ch[1], c.inner_kernel},
          {"encoder.conv2", ch[1], ch[2], c.inner_kernel}};
}

inline std::vector<ConvLayerSpec> decoder_layers(const NetworkConfig& c) {
  const auto& ch = c.encoder_channels;
  return {{"decoder.conv0", ch[2], ch[1], c.inner_kernel},
          {"decoder.conv1", ch[1], ch[0], c.inner_kernel},
          {"decoder.conv2", ch[0], 3, c.edge_kernel}};
}

inline std::string sab_prefix(std::size_t i) { return "sab" + std::to_string(i); }

// Three hypernetwork heads per style-aware block.
inline std::vector<HeadSpec> sab_heads(const NetworkConfig& c, std::size_t i) {
  const std::size_t cin = c.bottleneck_channels();
  const std::string p = sab_prefix(i);
  return {{p + ".kernel_head", c.style_dim, c.mlp_hidden, cin * c.sconv_kernel_h * c.sconv_kernel_w},
          {p + ".norm_head", c.style_dim, c.mlp_hidden, 2 * cin},
          {p + ".mod_head", c.style_dim, c.mlp_hidden, cin}};
}

// Per-style generator parameters for one block.
template <std::floating_point T>
struct AdaptedBlock {
  Tensor<T> kernels;  // C x 1 x kh x kw
  Tensor<T> scale;    // beta, [C]
  Tensor<T> shift;    // gamma, [C]
  Tensor<T> modulation;  // v in (0, 1), [C]
};

template <std::floating_point T>
using AdaptedStyleParams = std::vector<AdaptedBlock<T>>;

template <std::floating_point T>
struct AdaptedBlockVars {
  Var<T> kernels, scale, shift, modulation;
};

// Intermediate values of one block, exposed for tests and diagnostics.
template <std::floating_point T>
struct SabTrace {
  Var<T> conv_out;    // E_out
  Var<T> normalized;  // E_o1
  Var<T> modulated;   // E_o2
  Var<T> out;
};

template <std::floating_point T>
class SamstModel {
 public:
  SamstModel() = default;
  SamstModel(NetworkConfig cfg, ModelWeights<T> weights) : cfg_(std::move(cfg)), weights_(std::move(weights)) {
    cfg_.validate();
    check_layout();
  }

  // Fan-in scaled uniform init. Head output layers start small, with biases
  // that make each block begin near identity: delta kernels, scale 1,
  // shift 0, modulation sigmoid(0).
  static SamstModel initialize(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng root(seed);
    ModelWeights<T> w;
    std::uint64_t stream = 0;
    auto conv = [&](const ConvLayerSpec& s) {
      CounterRng r = root.split(stream++);
      const double bound = std::sqrt(6.0 / static_cast<double>(s.in * s.kernel * s.kernel));
      w.add(s.name + ".weight", Tensor<T>::uniform(Shape{s.out, s.in, s.kernel, s.kernel}, r, -bound, bound));
      w.add(s.name + ".bias", Tensor<T>(Shape{s.out}));
    };
    for (const auto& s : encoder_layers(cfg)) conv(s);
    const std::size_t cin = cfg.bottleneck_channels();
    const std::size_t kk = cfg.sconv_kernel_h * cfg.sconv_kernel_w;
    for (std::size_t i = 0; i < cfg.sab_count; ++i) {
      for (const auto& h : sab_heads(cfg, i)) {
        CounterRng r = root.split(stream++);
        const double b0 = std::sqrt(6.0 / static_cast<double>(h.in));
        const double b1 = 0.1 * std::sqrt(3.0 / static_cast<double>(h.hidden));
        w.add(h.name + ".fc0.weight", Tensor<T>::uniform(Shape{h.hidden, h.in}, r, -b0, b0));
        w.add(h.name + ".fc0.bias", Tensor<T>(Shape{h.hidden}));
        w.add(h.name + ".fc1.weight", Tensor<T>::uniform(Shape{h.out, h.hidden}, r, -b1, b1));
        Tensor<T> bias(Shape{h.out});
        if (h.name.ends_with("kernel_head")) {
          for (std::size_t c = 0; c < cin; ++c) bias[c * kk + kk / 2] = T(1);
        } else if (h.name.ends_with("norm_head")) {
          for (std::size_t c = 0; c < cin; ++c) bias[c] = T(1);
        }
        w.add(h.name + ".fc1.bias", std::move(bias));
      }
    }
    for (const auto& s : decoder_layers(cfg)) conv(s);
    return SamstModel(cfg, std::move(w));
  }

  const NetworkConfig& config() const noexcept { return cfg_; }
  ModelWeights<T>& weights() noexcept { return weights_; }
  const ModelWeights<T>& weights() const noexcept { return weights_; }

  // Tape leaves for every parameter, aligned with weights().all().
  class Bound {
   public:
    Var<T> operator()(const std::string& name) const { return vars_[weights_->index_of(name)]; }

   private:
    friend class SamstModel;
    const ModelWeights<T>* weights_ = nullptr;
    std::vector<Var<T>> vars_;
  };

  Bound bind(Tape<T>& tape) {
    Bound b;
    b.weights_ = &weights_;
    for (auto& p : weights_.all()) b.vars_.push_back(tape.param(p));
    return b;
  }

  // Binds every weight as a constant; used for inference and frozen models.
  Bound bind_frozen(Tape<T>& tape) const {
    Bound b;
    b.weights_ = &weights_;
    for (const auto& p : weights_.all()) b.vars_.push_back(tape.constant(p.value));
    return b;
  }

  static void check_image(const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) {
      throw ShapeError("expected a 3 x H x W image, got " + shape_str(img.shape()));
    }
    if (img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0) {
      throw ShapeError("image size " + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(2)) +
                       " is not divisible by 4; pad it first (see pad_reflect_to_multiple)");
    }
    for (T v : img.data()) {
      if (!(v >= T(0) && v <= T(1))) throw ContractError("image values must lie in [0, 1]");
    }
  }

  Var<T> encode(const Bound& b, Var<T> img) const {
    check_image(img.value());
    const auto layers = encoder_layers(cfg_);
    Var<T> x = img;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& s = layers[i];
      x = ops::relu(ops::conv2d(x, b(s.name + ".weight"), b(s.name + ".bias"), 1, s.kernel / 2));
      if (i + 1 < layers.size()) x = ops::maxpool2(x);
    }
    return x;
  }

  Var<T> decode(const Bound& b, Var<T> feat) const {
    if (feat.value().rank() != 3 || feat.value().dim(0) != cfg_.bottleneck_channels()) {
      throw ShapeError("decode: expected " + std::to_string(cfg_.bottleneck_channels()) + " x h x w feature, got " +
                       shape_str(feat.shape()));
    }
    const auto layers = decoder_layers(cfg_);
    Var<T> x = feat;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& s = layers[i];
      x = ops::conv2d(x, b(s.name + ".weight"), b(s.name + ".bias"), 1, s.kernel / 2);
      if (i + 1 < layers.size()) {
        x = ops::nearest_up2(ops::relu(x));
      } else {
        x = ops::sigmoid(x);
      }
    }
    return x;
  }

  Var<T> head(const Bound& b, const std::string& name, Var<T> f) const {
    Var<T> h = ops::relu(ops::linear(f, b(name + ".fc0.weight"), b(name + ".fc0.bias")));
    return ops::linear(h, b(name + ".fc1.weight"), b(name + ".fc1.bias"));
  }

  std::vector<AdaptedBlockVars<T>> adapt(const Bound& b, Var<T> f) const {
    if (f.value().rank() != 1 || f.value().size() != cfg_.style_dim) {
      throw ShapeError("style representation must have length " + std::to_string(cfg_.style_dim) + ", got " +
                       shape_str(f.shape()));
    }
    const std::size_t cin = cfg_.bottleneck_channels();
    std::vector<AdaptedBlockVars<T>> out;
    for (std::size_t i = 0; i < cfg_.sab_count; ++i) {
      const std::string p = sab_prefix(i);
      AdaptedBlockVars<T> a;
      a.kernels = ops::reshape(head(b, p + ".kernel_head", f),
                               Shape{cin, 1, cfg_.sconv_kernel_h, cfg_.sconv_kernel_w});
      Var<T> norm = head(b, p + ".norm_head", f);
      a.scale = ops::slice(norm, 0, cin);
      a.shift = ops::slice(norm, cin, cin);
      a.modulation = ops::sigmoid(head(b, p + ".mod_head", f));
      out.push_back(a);
    }
    return out;
  }

  // E_out = K (*) E; E_o1 = beta * norm(E_out) + gamma; E_o2 = E * v;
  // out = relu(E_o1 + E_o2) + E.
  SabTrace<T> sab_forward(Var<T> e, const AdaptedBlockVars<T>& p) const {
    if (e.value().rank() != 3 || e.value().dim(0) != p.scale.value().size() ||
        p.kernels.value().dim(0) != e.value().dim(0)) {
      throw ShapeError("sab_forward: feature " + shape_str(e.shape()) + " does not match adapted parameters for " +
                       std::to_string(p.scale.value().size()) + " channels");
    }
    SabTrace<T> t;
    t.conv_out = ops::depthwise_conv2d_dynamic(e, p.kernels, e.value().dim(0));
    auto norm = ops::instance_norm(t.conv_out, static_cast<T>(cfg_.eps));
    t.normalized = ops::add(ops::mul(norm.out, p.scale), p.shift);
    t.modulated = ops::mul(e, p.modulation);
    t.out = ops::add(ops::relu(ops::add(t.normalized, t.modulated)), e);
    return t;
  }

  Var<T> stylize_adapted(const Bound& b, Var<T> img, const std::vector<AdaptedBlockVars<T>>& adapted) const {
    Var<T> e = encode(b, img);
    for (const auto& p : adapted) e = sab_forward(e, p).out;
    return decode(b, e);
  }

  Var<T> stylize(const Bound& b, Var<T> img, Var<T> f) const { return stylize_adapted(b, img, adapt(b, f)); }

  // --- value-level helpers (no gradient) ---

  static Tensor<T> rep_tensor(const StyleRepresentation& f) {
    f.validate();
    std::vector<T> v(f.values.begin(), f.values.end());
    const Shape shape{v.size()};
    return Tensor<T>(shape, std::move(v));
  }

  AdaptedStyleParams<T> predict_adapted_params(const StyleRepresentation& f) const {
    Tape<T> tape(false);
    const Bound b = bind_frozen(tape);
    AdaptedStyleParams<T> out;
    for (const auto& a : adapt(b, tape.constant(rep_tensor(f)))) {
      out.push_back({a.kernels.value(), a.scale.value(), a.shift.value(), a.modulation.value()});
    }
    return out;
  }

  Tensor<T> stylize(const Tensor<T>& img, const StyleRepresentation& f) const {
    Tape<T> tape(false);
    const Bound b = bind_frozen(tape);
    return stylize(b, tape.constant(img), tape.constant(rep_tensor(f))).value();
  }

  Tensor<T> stylize(const Tensor<T>& img, const AdaptedStyleParams<T>& adapted) const {
    if (adapted.size() != cfg_.sab_count) throw ShapeError("adapted parameters cover the wrong number of blocks");
    Tape<T> tape(false);
    const Bound b = bind_frozen(tape);
    std::vector<AdaptedBlockVars<T>> vars;
    for (const auto& a : adapted) {
      vars.push_back({tape.constant(a.kernels), tape.constant(a.scale), tape.constant(a.shift),
                      tape.constant(a.modulation)});
    }
    return stylize_adapted(b, tape.constant(img), vars).value();
  }

  Tensor<T> encode(const Tensor<T>& img) const {
    Tape<T> tape(false);
    return encode(bind_frozen(tape), tape.constant(img)).value();
  }

  Tensor<T> decode(const Tensor<T>& feat) const {
    Tape<T> tape(false);
    return decode(bind_frozen(tape), tape.constant(feat)).value();
  }

 private:
  void check_layout() const {
    auto expect = [&](const std::string& name, const Shape& shape) {
      if (!weights_.contains(name)) throw FormatError("model weights are missing '" + name + "'");
      if (weights_.at(name).value.shape() != shape) {
        throw FormatError("parameter '" + name + "' has shape " + shape_str(weights_.at(name).value.shape()) +
                          ", config expects " + shape_str(shape));
      }
    };
    std::size_t expected = 0;
    for (const auto& layers : {encoder_layers(cfg_), decoder_layers(cfg_)}) {
      for (const auto& s : layers) {
        expect(s.name + ".weight", Shape{s.out, s.in, s.kernel, s.kernel});
        expect(s.name + ".bias", Shape{s.out});
        expected += 2;
      }
    }
    for (std::size_t i = 0; i < cfg_.sab_count; ++i) {
      for (const auto& h : sab_heads(cfg_, i)) {
        expect(h.name + ".fc0.weight", Shape{h.hidden, h.in});
        expect(h.name + ".fc0.bias", Shape{h.hidden});
        expect(h.name + ".fc1.weight", Shape{h.out, h.hidden});
        expect(h.name + ".fc1.bias", Shape{h.out});
        expected += 4;
      }
    }
    if (weights_.all().size() != expected) {
      throw FormatError("model weights hold " + std::to_string(weights_.all().size()) + " tensors, config expects " +
                        std::to_string(expected));
    }
  }

  NetworkConfig cfg_;
  ModelWeights<T> weights_;
};

}  // namespace samst

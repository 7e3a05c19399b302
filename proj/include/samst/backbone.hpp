#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "samst/ops.hpp"
#include "samst/rng.hpp"

namespace samst {

template <std::floating_point T>
struct BackboneLayer {
  enum class Kind { conv, relu, maxpool };
  Kind kind;
  std::string name;
  Tensor<T> weight;  // conv only: Cout x Cin x k x k
  Tensor<T> bias;
};

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

// Frozen feature stack used by the perceptual losses. Weights only ever enter
// a tape as constants, so no optimizer can reach them.
template <std::floating_point T>
class FeatureBackbone {
 public:
  FeatureBackbone() = default;
  FeatureBackbone(std::vector<BackboneLayer<T>> layers, std::vector<std::string> content_taps,
                  std::vector<std::string> style_taps, std::array<double, 3> mean = kImageNetMean,
                  std::array<double, 3> stddev = kImageNetStd)
      : layers_(std::move(layers)),
        content_taps_(std::move(content_taps)),
        style_taps_(std::move(style_taps)),
        mean_(mean),
        std_(stddev) {
    for (const auto& t : content_taps_) require_tap(t);
    for (const auto& t : style_taps_) require_tap(t);
  }

  // Layer names of the VGG-16 prefix used here (through relu4_3), with the
  // weight shapes expected in an archive as "<conv>.weight" / "<conv>.bias".
  static std::vector<std::pair<std::string, Shape>> vgg16_manifest() {
    const std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> convs = {
        {"conv1_1", {3, 64}},    {"conv1_2", {64, 64}},   {"conv2_1", {64, 128}},  {"conv2_2", {128, 128}},
        {"conv3_1", {128, 256}}, {"conv3_2", {256, 256}}, {"conv3_3", {256, 256}}, {"conv4_1", {256, 512}},
        {"conv4_2", {512, 512}}, {"conv4_3", {512, 512}}};
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& [name, io] : convs) {
      out.emplace_back(name + ".weight", Shape{io.second, io.first, 3, 3});
      out.emplace_back(name + ".bias", Shape{io.second});
    }
    return out;
  }

  // Builds the VGG-16 stack from named tensors (see vgg16_manifest()).
  static FeatureBackbone vgg16(const std::map<std::string, Tensor<T>>& tensors,
                               std::array<double, 3> mean = kImageNetMean,
                               std::array<double, 3> stddev = kImageNetStd) {
    for (const auto& [name, shape] : vgg16_manifest()) {
      auto it = tensors.find(name);
      if (it == tensors.end()) {
        throw FormatError("VGG archive is missing '" + name +
                          "'; convert the public VGG-16 weights with tools/convert_vgg16.py");
      }
      if (it->second.shape() != shape) {
        throw FormatError("VGG tensor '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                          shape_str(shape));
      }
    }
    const std::vector<std::vector<std::string>> blocks = {
        {"1_1", "1_2"}, {"2_1", "2_2"}, {"3_1", "3_2", "3_3"}, {"4_1", "4_2", "4_3"}};
    std::vector<BackboneLayer<T>> layers;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (const auto& s : blocks[b]) {
        layers.push_back({BackboneLayer<T>::Kind::conv, "conv" + s, tensors.at("conv" + s + ".weight"),
                          tensors.at("conv" + s + ".bias")});
        layers.push_back({BackboneLayer<T>::Kind::relu, "relu" + s, {}, {}});
      }
      if (b + 1 < blocks.size()) layers.push_back({BackboneLayer<T>::Kind::maxpool, "pool" + std::to_string(b + 1), {}, {}});
    }
    return FeatureBackbone(std::move(layers), {"relu3_3"}, {"relu1_2", "relu2_2", "relu3_3", "relu4_3"}, mean, stddev);
  }

  // Hermetic stand-in: three fixed-seed random 3x3 conv layers.
  static FeatureBackbone test_backbone(std::uint64_t seed = 0x5EED) {
    CounterRng root(seed);
    const std::array<std::pair<std::size_t, std::size_t>, 3> io{{{3, 8}, {8, 16}, {16, 32}}};
    std::vector<BackboneLayer<T>> layers;
    for (std::size_t i = 0; i < io.size(); ++i) {
      CounterRng r = root.split(i);
      const auto [cin, cout] = io[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
      const std::string n = std::to_string(i + 1);
      layers.push_back({BackboneLayer<T>::Kind::conv, "conv" + n,
                        Tensor<T>::uniform(Shape{cout, cin, 3, 3}, r, -bound, bound),
                        Tensor<T>::uniform(Shape{cout}, r, -0.1, 0.1)});
      layers.push_back({BackboneLayer<T>::Kind::relu, "relu" + n, {}, {}});
      if (i + 1 < io.size()) layers.push_back({BackboneLayer<T>::Kind::maxpool, "pool" + n, {}, {}});
    }
    return FeatureBackbone(std::move(layers), {"relu3"}, {"relu1", "relu2", "relu3"});
  }

  const std::vector<BackboneLayer<T>>& layers() const noexcept { return layers_; }
  const std::vector<std::string>& content_taps() const noexcept { return content_taps_; }
  const std::vector<std::string>& style_taps() const noexcept { return style_taps_; }
  void set_taps(std::vector<std::string> content, std::vector<std::string> style) {
    for (const auto& t : content) require_tap(t);
    for (const auto& t : style) require_tap(t);
    content_taps_ = std::move(content);
    style_taps_ = std::move(style);
  }
  const std::array<double, 3>& mean() const noexcept { return mean_; }
  const std::array<double, 3>& stddev() const noexcept { return std_; }

  // Runs the stack up to the deepest requested tap. Gradients reach `image`
  // (if it requires them); weights enter as constants.
  std::map<std::string, Var<T>> extract(Var<T> image, const std::vector<std::string>& taps) const {
    if (layers_.empty()) throw ContractError("feature backbone is not loaded");
    if (image.value().rank() != 3 || image.value().dim(0) != 3) {
      throw ShapeError("backbone expects a 3 x H x W image, got " + shape_str(image.shape()));
    }
    std::set<std::string> wanted(taps.begin(), taps.end());
    for (const auto& t : wanted) require_tap(t);
    Tape<T>& tape = *image.tape;
    Tensor<T> shift(Shape{3}), gain(Shape{3});
    for (std::size_t c = 0; c < 3; ++c) {
      shift[c] = static_cast<T>(mean_[c]);
      gain[c] = static_cast<T>(1.0 / std_[c]);
    }
    Var<T> x = ops::mul(ops::sub(image, tape.constant(shift)), tape.constant(gain));
    std::map<std::string, Var<T>> out;
    for (const auto& layer : layers_) {
      if (wanted.empty()) break;
      switch (layer.kind) {
        case BackboneLayer<T>::Kind::conv:
          x = ops::conv2d(x, tape.constant(layer.weight), tape.constant(layer.bias), 1, layer.weight.dim(2) / 2);
          break;
        case BackboneLayer<T>::Kind::relu:
          x = ops::relu(x);
          break;
        case BackboneLayer<T>::Kind::maxpool:
          x = ops::maxpool2(x);
          break;
      }
      if (wanted.erase(layer.name)) out.emplace(layer.name, x);
    }
    return out;
  }

 private:
  void require_tap(const std::string& name) const {
    if (std::none_of(layers_.begin(), layers_.end(), [&](const auto& l) { return l.name == name; })) {
      throw ContractError("unknown backbone tap '" + name + "'");
    }
  }

  std::vector<BackboneLayer<T>> layers_;
  std::vector<std::string> content_taps_;
  std::vector<std::string> style_taps_;
  std::array<double, 3> mean_{kImageNetMean};
  std::array<double, 3> std_{kImageNetStd};
};

}  // namespace samst

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "samst/error.hpp"

namespace samst {

// Generator shape. Encoder: conv(edge)+relu+pool, conv(inner)+relu+pool,
// conv(inner)+relu. Decoder mirrors it with conv+relu+up2 and a final
// conv(edge)+sigmoid.
struct NetworkConfig {
  std::array<std::size_t, 3> encoder_channels{16, 40, 128};
  std::size_t edge_kernel = 3;
  std::size_t inner_kernel = 3;
  std::size_t sab_count = 3;
  std::size_t sconv_kernel_w = 3;
  std::size_t sconv_kernel_h = 3;
  std::size_t mlp_hidden = 160;
  std::size_t style_dim = 16;
  double eps = 1e-5;

  std::size_t bottleneck_channels() const { return encoder_channels[2]; }

  void validate() const {
    for (auto c : encoder_channels)
      if (c == 0) throw ContractError("network config: encoder channels must be positive");
    if (sab_count < 1) throw ContractError("network config: sab_count must be >= 1");
    if (sconv_kernel_w % 2 == 0 || sconv_kernel_h % 2 == 0)
      throw ContractError("network config: SConv kernel sizes must be odd");
    if (edge_kernel % 2 == 0 || inner_kernel % 2 == 0)
      throw ContractError("network config: encoder/decoder kernel sizes must be odd");
    if (mlp_hidden == 0 || style_dim == 0) throw ContractError("network config: mlp_hidden and style_dim must be positive");
    if (!(eps >= 0.0)) throw ContractError("network config: eps must be non-negative");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct LossWeights {
  double content = 1.0;
  double style = 10.0;
  double reconstruction = 0.01;
  double geometric = 0.01;

  void validate() const {
    if (content < 0 || style < 0 || reconstruction < 0 || geometric < 0)
      throw ContractError("loss weights must be non-negative");
  }
};

enum class GeoMode { all8, sample1 };

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  double lr0 = 1e-3;
  std::size_t lr_halve_every = 750;
  LossWeights loss_weights{};
  std::size_t content_crop = 64;
  std::size_t style_size = 128;
  std::uint64_t seed = 7;
  bool incremental = false;
  GeoMode geo_mode = GeoMode::all8;
  std::size_t checkpoint_every = 500;
  std::size_t incremental_iterations = 3000;

  void validate() const {
    if (batch_size == 0 || lr_halve_every == 0 || content_crop == 0 || style_size == 0)
      throw ContractError("train config: counts must be positive");
    if (content_crop % 4 != 0) throw ContractError("train config: content_crop must be divisible by 4");
    if (!(lr0 > 0)) throw ContractError("train config: lr0 must be positive");
    loss_weights.validate();
  }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = {{"encoder_channels", c.encoder_channels},
       {"edge_kernel", c.edge_kernel},
       {"inner_kernel", c.inner_kernel},
       {"sab_count", c.sab_count},
       {"sconv_kernel", {c.sconv_kernel_w, c.sconv_kernel_h}},
       {"mlp_hidden", c.mlp_hidden},
       {"style_dim", c.style_dim},
       {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  c.edge_kernel = j.value("edge_kernel", d.edge_kernel);
  c.inner_kernel = j.value("inner_kernel", d.inner_kernel);
  c.sab_count = j.value("sab_count", d.sab_count);
  if (j.contains("sconv_kernel")) {
    c.sconv_kernel_w = j.at("sconv_kernel").at(0).get<std::size_t>();
    c.sconv_kernel_h = j.at("sconv_kernel").at(1).get<std::size_t>();
  }
  c.mlp_hidden = j.value("mlp_hidden", d.mlp_hidden);
  c.style_dim = j.value("style_dim", d.style_dim);
  c.eps = j.value("eps", d.eps);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"content", w.content}, {"style", w.style}, {"reconstruction", w.reconstruction}, {"geometric", w.geometric}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  w.content = j.value("content", d.content);
  w.style = j.value("style", d.style);
  w.reconstruction = j.value("reconstruction", d.reconstruction);
  w.geometric = j.value("geometric", d.geometric);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"lr0", c.lr0},
       {"lr_halve_every", c.lr_halve_every},
       {"loss_weights", c.loss_weights},
       {"content_crop", c.content_crop},
       {"style_size", c.style_size},
       {"seed", c.seed},
       {"incremental", c.incremental},
       {"geo_mode", c.geo_mode == GeoMode::all8 ? "all8" : "sample1"},
       {"checkpoint_every", c.checkpoint_every},
       {"incremental_iterations", c.incremental_iterations}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr0 = j.value("lr0", d.lr0);
  c.lr_halve_every = j.value("lr_halve_every", d.lr_halve_every);
  c.loss_weights = j.value("loss_weights", d.loss_weights);
  c.content_crop = j.value("content_crop", d.content_crop);
  c.style_size = j.value("style_size", d.style_size);
  c.seed = j.value("seed", d.seed);
  c.incremental = j.value("incremental", d.incremental);
  const std::string geo = j.value("geo_mode", std::string("all8"));
  if (geo == "all8") c.geo_mode = GeoMode::all8;
  else if (geo == "sample1") c.geo_mode = GeoMode::sample1;
  else throw FormatError("unknown geo_mode '" + geo + "' (expected all8 or sample1)");
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.incremental_iterations = j.value("incremental_iterations", d.incremental_iterations);
}

// Config file: {"version": 1, "network": {...}, "train": {...}, "backbone": ...}.
// Missing keys fall back to defaults. "backbone" is "test" for the built-in
// random stand-in or a path to a converted VGG16 archive.
struct ProjectConfig {
  int version = 1;
  NetworkConfig network;
  TrainConfig train;
  std::string backbone = "test";
};

inline ProjectConfig parse_project_config(const std::string& text) {
  ProjectConfig pc;
  try {
    const auto j = nlohmann::json::parse(text);
    pc.version = j.value("version", 1);
    if (pc.version != 1) throw FormatError("unsupported config version " + std::to_string(pc.version));
    if (j.contains("network")) pc.network = j.at("network").get<NetworkConfig>();
    if (j.contains("train")) pc.train = j.at("train").get<TrainConfig>();
    pc.backbone = j.value("backbone", pc.backbone);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  pc.network.validate();
  pc.train.validate();
  return pc;
}

inline ProjectConfig load_project_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_project_config(ss.str());
}

inline std::string dump_project_config(const ProjectConfig& pc) {
  nlohmann::json j = {{"version", pc.version}, {"network", pc.network}, {"train", pc.train}, {"backbone", pc.backbone}};
  return j.dump(2);
}

}  // namespace samst

#pragma once

#include <cstddef>
#include <cstdint>

#include "samst/model.hpp"

namespace samst {

struct Accounting {
  std::uint64_t params_total = 0;  // every stored parameter, hypernetwork heads included
  std::uint64_t params_oip = 0;    // encoder + decoder + per-style adapted parameters
  std::uint64_t flops = 0;         // one stylization with cached adapted parameters
  std::uint64_t params_per_style = 0;  // stored per codebook entry
};

// Convolutions cost 2*k*k*Cin*Cout*Hout*Wout (bias adds are not counted).
inline std::uint64_t conv_flops(std::uint64_t k, std::uint64_t cin, std::uint64_t cout, std::uint64_t h,
                                std::uint64_t w) {
  return 2 * k * k * cin * cout * h * w;
}

inline std::uint64_t linear_params(std::uint64_t in, std::uint64_t out) { return in * out + out; }

inline std::uint64_t conv_params(const ConvLayerSpec& s) { return s.out * s.in * s.kernel * s.kernel + s.out; }

// Pointwise costs per element: relu 1, sigmoid 4, maxpool 3 compares per
// output, instance norm 5 (mean, centre, square, accumulate, scale), affine
// 2, modulation 1, fusion add 1, residual add 1. Nearest upsampling is free.
inline Accounting account(const NetworkConfig& cfg, std::uint64_t height, std::uint64_t width) {
  cfg.validate();
  Accounting a;
  std::uint64_t enc_dec = 0;
  for (const auto& s : encoder_layers(cfg)) enc_dec += conv_params(s);
  for (const auto& s : decoder_layers(cfg)) enc_dec += conv_params(s);
  std::uint64_t heads = 0;
  for (std::size_t i = 0; i < cfg.sab_count; ++i)
    for (const auto& h : sab_heads(cfg, i)) heads += linear_params(h.in, h.hidden) + linear_params(h.hidden, h.out);
  const std::uint64_t cin = cfg.bottleneck_channels();
  const std::uint64_t kk = cfg.sconv_kernel_h * cfg.sconv_kernel_w;
  const std::uint64_t adapted = cfg.sab_count * (cin * kk + 3 * cin);
  a.params_total = enc_dec + heads;
  a.params_oip = enc_dec + adapted;
  a.params_per_style = cfg.style_dim;

  std::uint64_t f = 0;
  std::uint64_t h = height, w = width;
  const auto enc = encoder_layers(cfg);
  for (std::size_t i = 0; i < enc.size(); ++i) {
    f += conv_flops(enc[i].kernel, enc[i].in, enc[i].out, h, w);
    f += enc[i].out * h * w;  // relu
    if (i + 1 < enc.size()) {
      h /= 2;
      w /= 2;
      f += 3 * enc[i].out * h * w;
    }
  }
  const std::uint64_t plane = cin * h * w;
  for (std::size_t i = 0; i < cfg.sab_count; ++i) {
    f += 2 * kk * plane;          // depthwise
    f += (5 + 2 + 1 + 1 + 1 + 1) * plane;  // norm, affine, modulation, fusion, relu, residual
  }
  const auto dec = decoder_layers(cfg);
  for (std::size_t i = 0; i < dec.size(); ++i) {
    f += conv_flops(dec[i].kernel, dec[i].in, dec[i].out, h, w);
    if (i + 1 < dec.size()) {
      f += dec[i].out * h * w;
      h *= 2;
      w *= 2;
    } else {
      f += 4 * dec[i].out * h * w;
    }
  }
  a.flops = f;
  return a;
}

}  // namespace samst

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "samst/rng.hpp"
#include "samst/tensor.hpp"

namespace samst {

// Procedural images for tests and demos. Contents are smooth colour
// gradients with a few soft-edged shapes; styles are periodic textures with
// their own palettes.
namespace synthetic {

using Color = std::array<double, 3>;

inline Color random_color(CounterRng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

template <std::floating_point T = float>
Tensor<T> content(CounterRng rng, std::size_t h, std::size_t w) {
  const Color a = random_color(rng), b = random_color(rng);
  const double angle = rng.uniform(0, 6.283185307179586);
  const double dx = std::cos(angle), dy = std::sin(angle);
  std::vector<Color> canvas(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * ((x / double(w) - 0.5) * dx + (y / double(h) - 0.5) * dy) * 1.4;
      for (int c = 0; c < 3; ++c) canvas[y * w + x][c] = a[c] * (1 - t) + b[c] * t;
    }
  const std::size_t shapes = 3 + rng.below(4);
  for (std::size_t s = 0; s < shapes; ++s) {
    const Color col = random_color(rng);
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double r = rng.uniform(0.1, 0.3) * std::min(h, w);
    const bool box = rng.below(2) == 1;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double ux = (x + 0.5 - cx) / r, uy = (y + 0.5 - cy) / r;
        const double d = box ? std::max(std::abs(ux), std::abs(uy)) : std::hypot(ux, uy);
        const double m = 1.0 - smoothstep(0.9, 1.1, d);
        for (int c = 0; c < 3; ++c) canvas[y * w + x][c] = canvas[y * w + x][c] * (1 - m) + col[c] * m;
      }
  }
  Tensor<T> img(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<T>(std::clamp(canvas[y * w + x][c], 0.0, 1.0));
  return img;
}

// kind % 4 selects stripes, checks, dots or waves.
template <std::floating_point T = float>
Tensor<T> style(CounterRng rng, std::size_t size, std::size_t kind) {
  const Color a = random_color(rng), b = random_color(rng), c2 = random_color(rng);
  const double freq = rng.uniform(4, 10) / static_cast<double>(size);
  const double angle = rng.uniform(0, 3.141592653589793);
  const double ca = std::cos(angle), sa = std::sin(angle);
  constexpr double tau = 6.283185307179586;
  Tensor<T> img(Shape{3, size, size});
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (x * ca + y * sa) * freq, v = (-x * sa + y * ca) * freq;
      double t = 0, q = 0;
      switch (kind % 4) {
        case 0:
          t = 0.5 + 0.5 * std::sin(tau * u);
          q = 0.5 + 0.5 * std::sin(tau * 3 * v);
          break;
        case 1:
          t = (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) % 2 == 0 ? 1.0 : 0.0;
          q = 0.5 + 0.5 * std::cos(tau * (u + v) * 0.5);
          break;
        case 2: {
          const double fu = u - std::floor(u) - 0.5, fv = v - std::floor(v) - 0.5;
          t = 1.0 - smoothstep(0.2, 0.3, std::hypot(fu, fv));
          q = 0.5 + 0.5 * std::sin(tau * v * 0.5);
          break;
        }
        default:
          t = 0.5 + 0.5 * std::sin(tau * (u + 0.3 * std::sin(tau * v)));
          q = 0.5 + 0.5 * std::sin(tau * 2 * v);
          break;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = (a[c] * (1 - t) + b[c] * t) * (0.75 + 0.25 * q) + 0.25 * c2[c] * (1 - q);
        img.at(c, y, x) = static_cast<T>(std::clamp(val, 0.0, 1.0));
      }
    }
  return img;
}

}  // namespace synthetic
}  // namespace samst

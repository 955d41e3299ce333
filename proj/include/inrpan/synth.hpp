#pragma once

// Seeded synthetic scenes with a known high-resolution ground truth, degraded
// the same way the sensor model degrades real imagery.

#include <array>
#include <cstdint>
#include <random>

#include "inrpan/degradation.hpp"

namespace inrpan {

namespace detail {

// Portable uniform draw in [0, 1) from a 64-bit engine.
inline double unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit(rng);
}

inline bool inside_polygon(double y, double x, const std::vector<std::array<double, 2>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[0] > y) != (b[0] > y) &&
        x < (b[1] - a[1]) * (y - a[0]) / (b[0] - a[0]) + a[1]) {
      inside = !inside;
    }
  }
  return inside;
}

// Band-correlated spectral signature: a shared amplitude with per-band jitter.
inline std::vector<double> signature(std::mt19937_64& rng, std::size_t bands, double amplitude) {
  std::vector<double> s(bands);
  const double tilt = uniform(rng, -0.3, 0.3);
  for (std::size_t b = 0; b < bands; ++b) {
    const double pos = bands > 1 ? static_cast<double>(b) / static_cast<double>(bands - 1) - 0.5 : 0.0;
    s[b] = amplitude * (1.0 + tilt * pos + uniform(rng, -0.15, 0.15));
  }
  return s;
}

}  // namespace detail

struct SynthOptions {
  std::size_t blobs = 14;
  std::size_t polygons = 8;
};

/// Ground truth at (r*h) x (r*w) x c built from smooth Gaussian blobs and
/// sharp-edged polygons; PAN is a random convex band mixture of it; LRMS is
/// its MTF blur decimated by r.
inline ImagePair synth_pair(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c,
                            const SensorSpec& sensor, const SynthOptions& options = {}) {
  if (h < 8 || w < 8) throw std::invalid_argument("synth_pair: h and w must be at least 8");
  if (c != sensor.bands) {
    throw std::invalid_argument("synth_pair: " + std::to_string(c) + " bands requested for sensor `" +
                                sensor.name + "` with " + std::to_string(sensor.bands));
  }
  sensor.validate();
  std::mt19937_64 rng(seed);
  const std::size_t height = sensor.ratio * h;
  const std::size_t width = sensor.ratio * w;
  const double extent = static_cast<double>(std::min(height, width));

  std::vector<double> scene(c * height * width);
  const auto base = detail::signature(rng, c, detail::uniform(rng, 0.25, 0.4));
  for (std::size_t b = 0; b < c; ++b)
    std::fill_n(scene.begin() + static_cast<std::ptrdiff_t>(b * height * width), height * width, base[b]);

  for (std::size_t n = 0; n < options.blobs; ++n) {
    const double cy = detail::uniform(rng, 0.0, static_cast<double>(height));
    const double cx = detail::uniform(rng, 0.0, static_cast<double>(width));
    const double sigma = detail::uniform(rng, 0.03, 0.2) * extent;
    const auto amp = detail::signature(rng, c, detail::uniform(rng, -0.25, 0.3));
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        const double g = std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
        for (std::size_t b = 0; b < c; ++b) scene[(b * height + y) * width + x] += amp[b] * g;
      }
  }

  for (std::size_t n = 0; n < options.polygons; ++n) {
    const double cy = detail::uniform(rng, 0.0, static_cast<double>(height));
    const double cx = detail::uniform(rng, 0.0, static_cast<double>(width));
    const double radius = detail::uniform(rng, 0.08, 0.3) * extent;
    const auto vertices = static_cast<std::size_t>(3 + rng() % 4);
    std::vector<double> angles(vertices);
    for (auto& a : angles) a = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<std::array<double, 2>> poly;
    for (double a : angles) {
      const double rr = radius * detail::uniform(rng, 0.5, 1.0);
      poly.push_back({cy + rr * std::sin(a), cx + rr * std::cos(a)});
    }
    const auto amp = detail::signature(rng, c, detail::uniform(rng, -0.2, 0.25));
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        if (!detail::inside_polygon(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5, poly)) continue;
        for (std::size_t b = 0; b < c; ++b) scene[(b * height + y) * width + x] += amp[b];
      }
  }

  MsImage truth(c, height, width);
  for (std::size_t i = 0; i < scene.size(); ++i)
    truth.data[i] = static_cast<float>(std::clamp(scene[i], 0.0, 1.0));

  std::vector<double> mix(c);
  double total = 0.0;
  for (auto& m : mix) total += (m = detail::uniform(rng, 0.2, 1.0));
  PanImage pan(height, width);
  for (std::size_t b = 0; b < c; ++b) {
    const double weight = mix[b] / total;
    auto band = truth.band(b);
    for (std::size_t i = 0; i < band.size(); ++i) pan.data[i] += static_cast<float>(weight * band[i]);
  }
  for (auto& v : pan.data) v = std::clamp(v, 0.0f, 1.0f);

  ImagePair pair;
  pair.sensor = sensor;
  pair.lrms = degrade(truth, ms_kernel(sensor));
  pair.pan = std::move(pan);
  pair.ground_truth = std::move(truth);
  pair.validate();
  return pair;
}

}  // namespace inrpan

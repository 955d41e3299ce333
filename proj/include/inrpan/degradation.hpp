#pragma once

// Sensor MTF modeled as a per-band Gaussian matched to its Nyquist gain,
// plus near-centered decimation. The same kernels drive both the constant
// input degradation and the differentiable blur inside the training loss.

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "inrpan/imagery.hpp"
#include "inrpan/ops.hpp"

namespace inrpan {

inline constexpr std::size_t kDefaultMtfTaps = 41;

struct MtfKernel {
  std::size_t ratio = 0;
  std::size_t size = 0;
  std::vector<double> sigmas;
  // Normalized 1-D taps per band; the 2-D kernel is their outer product.
  std::vector<std::vector<float>> taps;

  std::size_t bands() const { return taps.size(); }

  /// Full k x k kernel of one band.
  std::vector<float> taps_2d(std::size_t band) const {
    const auto& t = taps.at(band);
    std::vector<float> out(size * size);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) out[i * size + j] = t[i] * t[j];
    return out;
  }
};

/// Gaussian standard deviation whose continuous frequency response equals
/// `gain` at the Nyquist frequency 1/(2r) of the r-decimated grid.
inline double mtf_sigma(double gain, std::size_t ratio) {
  if (!(gain > 0.0 && gain < 1.0)) {
    throw std::invalid_argument("MTF gain must lie in (0, 1), got " + std::to_string(gain));
  }
  return static_cast<double>(ratio) / std::numbers::pi * std::sqrt(-2.0 * std::log(gain));
}

inline std::vector<float> gaussian_taps(double sigma, std::size_t size) {
  std::vector<double> raw(size);
  const double center = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    raw[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += raw[i];
  }
  std::vector<float> taps(size);
  for (std::size_t i = 0; i < size; ++i) taps[i] = static_cast<float>(raw[i] / total);
  return taps;
}

inline MtfKernel build_mtf_kernel(const std::vector<double>& gains, std::size_t ratio,
                                  std::size_t size = kDefaultMtfTaps) {
  if (size % 2 == 0) throw std::invalid_argument("MTF kernel size must be odd");
  if (ratio == 0) throw std::invalid_argument("MTF ratio must be positive");
  MtfKernel kernel;
  kernel.ratio = ratio;
  kernel.size = size;
  for (double gain : gains) {
    const double sigma = mtf_sigma(gain, ratio);
    kernel.sigmas.push_back(sigma);
    kernel.taps.push_back(gaussian_taps(sigma, size));
  }
  return kernel;
}

inline MtfKernel ms_kernel(const SensorSpec& sensor, std::size_t size = kDefaultMtfTaps) {
  return build_mtf_kernel(sensor.nyquist_gains, sensor.ratio, size);
}

inline MtfKernel pan_kernel(const SensorSpec& sensor, std::size_t size = kDefaultMtfTaps) {
  return build_mtf_kernel({sensor.pan_nyquist_gain}, sensor.ratio, size);
}

/// First kept sample: (r - 1) / 2 rounded down.
inline std::size_t decimation_offset(std::size_t ratio) { return (ratio - 1) / 2; }

// Tensor-level forms, differentiable through the tape.

inline Tensor mtf_blur(const Tensor& image, const MtfKernel& kernel) {
  return separable_blur(image, kernel.taps);
}

inline Tensor decimate(const Tensor& image, std::size_t ratio) {
  return decimate(image, ratio, decimation_offset(ratio));
}

// Image-level forms.

inline MsImage mtf_blur(const MsImage& image, const MtfKernel& kernel) {
  if (kernel.bands() != image.bands) {
    throw ShapeError("mtf_blur: kernel has " + std::to_string(kernel.bands()) +
                     " bands, image has " + std::to_string(image.bands));
  }
  NoGradGuard guard;
  return MsImage::from_tensor(mtf_blur(image.to_tensor(), kernel));
}

inline PanImage mtf_blur(const PanImage& image, const MtfKernel& kernel) {
  if (kernel.bands() != 1) {
    throw ShapeError("mtf_blur: PAN needs a single-band kernel, got " +
                     std::to_string(kernel.bands()));
  }
  NoGradGuard guard;
  return PanImage::from_tensor(mtf_blur(image.to_tensor(), kernel));
}

inline MsImage decimate(const MsImage& image, std::size_t ratio) {
  NoGradGuard guard;
  return MsImage::from_tensor(decimate(image.to_tensor(), ratio));
}

inline PanImage decimate(const PanImage& image, std::size_t ratio) {
  NoGradGuard guard;
  return PanImage::from_tensor(decimate(image.to_tensor(), ratio));
}

/// MTF blur followed by decimation by the kernel's ratio.
inline MsImage degrade(const MsImage& image, const MtfKernel& kernel) {
  return decimate(mtf_blur(image, kernel), kernel.ratio);
}

inline PanImage degrade(const PanImage& image, const MtfKernel& kernel) {
  return decimate(mtf_blur(image, kernel), kernel.ratio);
}

/// Reduced-resolution copies of a pair: level 1 divides every spatial
/// dimension by r, level 2 by r^2.
struct DegradedLevels {
  PanImage pan_1;
  MsImage lrms_1;
  std::optional<PanImage> pan_2;
  std::optional<MsImage> lrms_2;
};

inline DegradedLevels degrade_pair(const ImagePair& pair, int levels,
                                   std::size_t kernel_size = kDefaultMtfTaps) {
  if (levels != 1 && levels != 2) throw std::invalid_argument("degrade_pair: levels must be 1 or 2");
  const std::size_t r = pair.sensor.ratio;
  const std::size_t need = levels == 1 ? r : r * r;
  if (pair.lrms.height % r || pair.lrms.width % r || pair.pan.height % need ||
      pair.pan.width % need || (levels == 2 && (pair.lrms.height % need || pair.lrms.width % need))) {
    throw ShapeError("degrade_pair: LRMS " + std::to_string(pair.lrms.height) + "x" +
                     std::to_string(pair.lrms.width) + " not divisible by " + std::to_string(need));
  }
  const MtfKernel ms = ms_kernel(pair.sensor, kernel_size);
  const MtfKernel pan = pan_kernel(pair.sensor, kernel_size);
  DegradedLevels out{degrade(pair.pan, pan), degrade(pair.lrms, ms), std::nullopt, std::nullopt};
  if (levels == 2) {
    out.pan_2 = degrade(out.pan_1, pan);
    out.lrms_2 = degrade(out.lrms_1, ms);
  }
  return out;
}

}  // namespace inrpan

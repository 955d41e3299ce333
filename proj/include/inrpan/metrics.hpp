#pragma once

// Fusion quality metrics.
//
// Full resolution (no reference): D_lambda, D_s and HQNR = (1 - D_lambda)(1 - D_s).
// Reduced resolution (with reference): Q2n, SAM, ERGAS, SCC, plus PSNR.
// Also the nearest and bicubic baselines used for comparisons.

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>

#include "inrpan/degradation.hpp"
#include "inrpan/imagery.hpp"

namespace inrpan {

inline constexpr std::size_t kQualityWindow = 32;

namespace detail {

struct WindowStats {
  double mean_x = 0, mean_y = 0, var_x = 0, var_y = 0, cov = 0;
};

// Two-pass moments of one window; population normalization.
inline WindowStats window_stats(std::span<const float> x, std::span<const float> y, std::size_t width,
                                std::size_t top, std::size_t left, std::size_t size) {
  WindowStats s;
  const double n = static_cast<double>(size * size);
  for (std::size_t i = top; i < top + size; ++i)
    for (std::size_t j = left; j < left + size; ++j) {
      s.mean_x += x[i * width + j];
      s.mean_y += y[i * width + j];
    }
  s.mean_x /= n;
  s.mean_y /= n;
  for (std::size_t i = top; i < top + size; ++i)
    for (std::size_t j = left; j < left + size; ++j) {
      const double dx = x[i * width + j] - s.mean_x;
      const double dy = y[i * width + j] - s.mean_y;
      s.var_x += dx * dx;
      s.var_y += dy * dy;
      s.cov += dx * dy;
    }
  s.var_x /= n;
  s.var_y /= n;
  s.cov /= n;
  return s;
}

inline std::size_t effective_window(std::size_t window, std::size_t height, std::size_t width) {
  if (window == 0) throw std::invalid_argument("quality window must be positive");
  return std::min({window, height, width});
}

}  // namespace detail

/// Universal image quality index averaged over sliding windows (stride 1).
/// Windows larger than the image shrink to fit. A window whose denominator
/// vanishes counts as 1 when both sides are the same nonzero constant and is
/// skipped otherwise; if every window is skipped the result is 0.
inline double q_index(std::span<const float> x, std::span<const float> y, std::size_t height,
                      std::size_t width, std::size_t window = kQualityWindow) {
  if (x.size() != y.size() || x.size() != height * width) {
    throw ShapeError("q_index: images differ in size");
  }
  const std::size_t w = detail::effective_window(window, height, width);
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + w <= height; ++i)
    for (std::size_t j = 0; j + w <= width; ++j) {
      const auto s = detail::window_stats(x, y, width, i, j, w);
      const double denom = (s.var_x + s.var_y) * (s.mean_x * s.mean_x + s.mean_y * s.mean_y);
      if (denom > 0.0) {
        acc += 4.0 * s.cov * s.mean_x * s.mean_y / denom;
        ++count;
      } else if (s.var_x == 0.0 && s.var_y == 0.0 && s.mean_x == s.mean_y && s.mean_x != 0.0) {
        acc += 1.0;
        ++count;
      }
    }
  return count ? acc / static_cast<double>(count) : 0.0;
}

inline double q_index(const PanImage& x, const PanImage& y, std::size_t window = kQualityWindow) {
  if (x.height != y.height || x.width != y.width) throw ShapeError("q_index: images differ in size");
  return q_index(x.data, y.data, x.height, x.width, window);
}

// ---------------------------------------------------------------------------
// Hypercomplex algebra (Cayley-Dickson doubling) for Q2n.

/// Conjugate: negate every imaginary component.
inline std::vector<double> hc_conj(std::span<const double> a) {
  std::vector<double> out(a.begin(), a.end());
  for (std::size_t i = 1; i < out.size(); ++i) out[i] = -out[i];
  return out;
}

/// Product in the 2^k-dimensional Cayley-Dickson algebra:
/// (a, b)(c, d) = (ac - d* b, d a + b c*).
inline std::vector<double> hc_mul(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n != b.size()) throw ShapeError("hc_mul: operand sizes differ");
  if (n == 1) return {a[0] * b[0]};
  if (n % 2) throw ShapeError("hc_mul: dimension must be a power of two");
  const std::size_t h = n / 2;
  auto a1 = a.first(h), a2 = a.subspan(h);
  auto c1 = b.first(h), c2 = b.subspan(h);
  const auto c1_conj = hc_conj(c1);
  const auto c2_conj = hc_conj(c2);
  const auto ac = hc_mul(a1, c1);
  const auto db = hc_mul(c2_conj, a2);
  const auto da = hc_mul(c2, a1);
  const auto bc = hc_mul(a2, c1_conj);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < h; ++i) {
    out[i] = ac[i] - db[i];
    out[h + i] = da[i] + bc[i];
  }
  return out;
}

inline double hc_norm(std::span<const double> a) {
  double s = 0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p *= 2;
  return p;
}

/// Basis products e_i * e_j = sign * e_k of the 2^k-dimensional algebra.
struct HypercomplexTable {
  std::size_t dim = 0;
  std::vector<std::size_t> index;
  std::vector<double> sign;

  explicit HypercomplexTable(std::size_t n) : dim(n), index(n * n), sign(n * n) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> a(n, 0.0), b(n, 0.0);
        a[i] = 1.0;
        b[j] = 1.0;
        const auto p = hc_mul(a, b);
        for (std::size_t k = 0; k < n; ++k)
          if (p[k] != 0.0) {
            index[i * n + j] = k;
            sign[i * n + j] = p[k];
          }
      }
  }
};

/// Q2n: Q generalized to band vectors seen as hypercomplex numbers (bands
/// zero-padded to a power of two), magnitude averaged over sliding windows.
inline double q2n(const MsImage& x, const MsImage& y, std::size_t window = kQualityWindow) {
  if (x.bands != y.bands || x.height != y.height || x.width != y.width) {
    throw ShapeError("q2n: images differ in shape");
  }
  const std::size_t dim = next_power_of_two(x.bands);
  const std::size_t bands = x.bands;
  const HypercomplexTable table(dim);
  const std::size_t w = detail::effective_window(window, x.height, x.width);
  const std::size_t area = x.height * x.width;
  const double n = static_cast<double>(w * w);

  double acc = 0;
  std::size_t count = 0;
  std::vector<double> mx(dim), my(dim), cross(bands * bands), cov(dim), dx(bands), dy(bands);
  for (std::size_t i = 0; i + w <= x.height; ++i)
    for (std::size_t j = 0; j + w <= x.width; ++j) {
      std::fill(mx.begin(), mx.end(), 0.0);
      std::fill(my.begin(), my.end(), 0.0);
      for (std::size_t b = 0; b < bands; ++b)
        for (std::size_t yy = i; yy < i + w; ++yy)
          for (std::size_t xx = j; xx < j + w; ++xx) {
            mx[b] += x.data[b * area + yy * x.width + xx];
            my[b] += y.data[b * area + yy * x.width + xx];
          }
      for (auto& v : mx) v /= n;
      for (auto& v : my) v /= n;

      // Centered second moments; the covariance x * conj(y) is bilinear, so
      // it follows from the band cross-moment matrix and the basis table.
      double var_x = 0, var_y = 0;
      std::fill(cross.begin(), cross.end(), 0.0);
      for (std::size_t yy = i; yy < i + w; ++yy)
        for (std::size_t xx = j; xx < j + w; ++xx) {
          const std::size_t p = yy * x.width + xx;
          for (std::size_t b = 0; b < bands; ++b) {
            dx[b] = x.data[b * area + p] - mx[b];
            dy[b] = y.data[b * area + p] - my[b];
            var_x += dx[b] * dx[b];
            var_y += dy[b] * dy[b];
          }
          for (std::size_t a = 0; a < bands; ++a)
            for (std::size_t b = 0; b < bands; ++b) cross[a * bands + b] += dx[a] * dy[b];
        }
      std::fill(cov.begin(), cov.end(), 0.0);
      for (std::size_t a = 0; a < bands; ++a)
        for (std::size_t b = 0; b < bands; ++b) {
          const double conj_sign = b == 0 ? 1.0 : -1.0;
          cov[table.index[a * dim + b]] += table.sign[a * dim + b] * conj_sign * cross[a * bands + b];
        }
      var_x /= n;
      var_y /= n;
      const double nx = hc_norm(mx);
      const double ny = hc_norm(my);
      const double denom = (var_x + var_y) * (nx * nx + ny * ny);
      if (denom > 0.0) {
        acc += 4.0 * (hc_norm(cov) / n) * nx * ny / denom;
        ++count;
      } else if (var_x == 0.0 && var_y == 0.0 && mx == my && nx != 0.0) {
        acc += 1.0;
        ++count;
      }
    }
  return count ? acc / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Reference metrics

/// Mean spectral angle in degrees; pixels with a zero vector are skipped.
inline double sam(const MsImage& x, const MsImage& y) {
  if (x.bands != y.bands || x.height != y.height || x.width != y.width) {
    throw ShapeError("sam: images differ in shape");
  }
  const std::size_t area = x.height * x.width;
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < area; ++p) {
    double dot = 0, nx = 0, ny = 0;
    for (std::size_t b = 0; b < x.bands; ++b) {
      const double a = x.data[b * area + p];
      const double c = y.data[b * area + p];
      dot += a * c;
      nx += a * a;
      ny += c * c;
    }
    if (nx == 0.0 || ny == 0.0) continue;
    acc += std::acos(std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0));
    ++count;
  }
  return count ? acc / static_cast<double>(count) * 180.0 / std::numbers::pi : 0.0;
}

/// (100 / r) * sqrt(mean_b (RMSE_b / mean(reference_b))^2)
inline double ergas(const MsImage& fused, const MsImage& reference, double ratio) {
  if (fused.bands != reference.bands || fused.height != reference.height ||
      fused.width != reference.width) {
    throw ShapeError("ergas: images differ in shape");
  }
  const std::size_t area = fused.height * fused.width;
  double acc = 0;
  for (std::size_t b = 0; b < fused.bands; ++b) {
    double se = 0, mean_ref = 0;
    for (std::size_t p = 0; p < area; ++p) {
      const double d = fused.data[b * area + p] - reference.data[b * area + p];
      se += d * d;
      mean_ref += reference.data[b * area + p];
    }
    mean_ref /= static_cast<double>(area);
    const double rmse = std::sqrt(se / static_cast<double>(area));
    if (mean_ref == 0.0) throw std::domain_error("ergas: reference band has zero mean");
    acc += (rmse / mean_ref) * (rmse / mean_ref);
  }
  return 100.0 / ratio * std::sqrt(acc / static_cast<double>(fused.bands));
}

namespace detail {

// 3x3 Laplacian high-pass over the valid interior.
inline std::vector<double> laplacian(std::span<const float> img, std::size_t height, std::size_t width) {
  std::vector<double> out;
  if (height < 3 || width < 3) return out;
  out.reserve((height - 2) * (width - 2));
  for (std::size_t i = 1; i + 1 < height; ++i)
    for (std::size_t j = 1; j + 1 < width; ++j) {
      double acc = 0;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) acc -= img[(i + di) * width + (j + dj)];
      acc += 9.0 * img[i * width + j];
      out.push_back(acc);
    }
  return out;
}

inline std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty()) return std::nullopt;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

/// Correlation of Laplacian high-pass responses, averaged over bands whose
/// high-pass is not identically zero on both sides.
inline double scc(const MsImage& x, const MsImage& y) {
  if (x.bands != y.bands || x.height != y.height || x.width != y.width) {
    throw ShapeError("scc: images differ in shape");
  }
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < x.bands; ++b) {
    const auto r = detail::pearson(detail::laplacian(x.band(b), x.height, x.width),
                                   detail::laplacian(y.band(b), y.height, y.width));
    if (r) {
      acc += *r;
      ++count;
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

inline double psnr(const MsImage& x, const MsImage& y, double peak = 1.0) {
  if (x.data.size() != y.data.size()) throw ShapeError("psnr: images differ in shape");
  double se = 0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - y.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.data.size());
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(peak * peak / mse);
}

// ---------------------------------------------------------------------------
// No-reference metrics

/// Spectral distortion: 1 - Q2n between the MTF-degraded fused image and the LRMS.
inline double d_lambda(const MsImage& fused, const MsImage& lrms, const SensorSpec& sensor,
                       std::size_t window = kQualityWindow) {
  const MsImage degraded = degrade(fused, ms_kernel(sensor));
  if (degraded.height != lrms.height || degraded.width != lrms.width) {
    throw ShapeError("d_lambda: fused image is not on the PAN grid of this LRMS");
  }
  return std::clamp(1.0 - q2n(degraded, lrms, window), 0.0, 1.0);
}

/// Window used at LRMS scale for a full-resolution window.
inline std::size_t low_resolution_window(std::size_t window, std::size_t ratio) {
  return std::max<std::size_t>(window / ratio, 2);
}

/// Spatial distortion: |mean_b Q(fused_b, PAN) - mean_b Q(lrms_b, PAN_lr)|,
/// PAN_lr being the MTF-degraded PAN.
inline double d_s(const MsImage& fused, const PanImage& pan, const MsImage& lrms,
                  const SensorSpec& sensor, std::size_t window = kQualityWindow) {
  if (fused.height != pan.height || fused.width != pan.width || fused.bands != lrms.bands) {
    throw ShapeError("d_s: fused image does not match the PAN grid or band count");
  }
  const PanImage pan_lr = degrade(pan, pan_kernel(sensor));
  const std::size_t lr_window = low_resolution_window(window, sensor.ratio);
  double high = 0, low = 0;
  for (std::size_t b = 0; b < fused.bands; ++b) {
    high += q_index(fused.band(b), pan.data, pan.height, pan.width, window);
    low += q_index(lrms.band(b), pan_lr.data, lrms.height, lrms.width, lr_window);
  }
  const double c = static_cast<double>(fused.bands);
  return std::clamp(std::abs(high / c - low / c), 0.0, 1.0);
}

inline double hqnr(double d_lambda_value, double d_s_value) {
  return (1.0 - d_lambda_value) * (1.0 - d_s_value);
}

struct MetricsReport {
  double d_lambda = 0;
  double d_s = 0;
  double hqnr = 0;
  std::optional<double> q2n;
  std::optional<double> sam_degrees;
  std::optional<double> ergas;
  std::optional<double> scc;

  static constexpr const char* kCsvHeader = "d_lambda,d_s,hqnr,q2n,sam,ergas,scc";

  void write_csv_row(std::ostream& out) const {
    auto opt = [&](const std::optional<double>& v) {
      if (v) out << *v;
    };
    out << d_lambda << ',' << d_s << ',' << hqnr << ',';
    opt(q2n);
    out << ',';
    opt(sam_degrees);
    out << ',';
    opt(ergas);
    out << ',';
    opt(scc);
    out << '\n';
  }
};

/// No-reference scores of a PAN-grid fused image, plus reference scores
/// when a ground truth is given.
inline MetricsReport evaluate(const MsImage& fused, const ImagePair& pair,
                              const std::optional<MsImage>& ground_truth = std::nullopt,
                              std::size_t window = kQualityWindow) {
  MetricsReport r;
  r.d_lambda = d_lambda(fused, pair.lrms, pair.sensor, window);
  r.d_s = d_s(fused, pair.pan, pair.lrms, pair.sensor, window);
  r.hqnr = hqnr(r.d_lambda, r.d_s);
  if (ground_truth) {
    r.q2n = q2n(fused, *ground_truth, window);
    r.sam_degrees = sam(fused, *ground_truth);
    r.ergas = ergas(fused, *ground_truth, static_cast<double>(pair.sensor.ratio));
    r.scc = scc(fused, *ground_truth);
  }
  return r;
}

/// Local HQNR over non-overlapping LRMS-scale blocks of `block` pixels.
/// Returns a [rows, cols] raster.
inline Tensor hqnr_map(const MsImage& fused, const ImagePair& pair, std::size_t block = 8) {
  const std::size_t r = pair.sensor.ratio;
  block = std::min({block, pair.lrms.height, pair.lrms.width});
  const std::size_t rows = pair.lrms.height / block;
  const std::size_t cols = pair.lrms.width / block;
  const MsImage degraded = degrade(fused, ms_kernel(pair.sensor));
  const PanImage pan_lr = degrade(pair.pan, pan_kernel(pair.sensor));

  auto crop_ms = [](const MsImage& img, std::size_t top, std::size_t left, std::size_t size) {
    MsImage out(img.bands, size, size);
    for (std::size_t b = 0; b < img.bands; ++b)
      for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) out.at(b, i, j) = img.at(b, top + i, left + j);
    return out;
  };
  auto crop_pan = [](const PanImage& img, std::size_t top, std::size_t left, std::size_t size) {
    PanImage out(size, size);
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) out.at(i, j) = img.at(top + i, left + j);
    return out;
  };

  std::vector<float> raster(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const auto lr = crop_ms(pair.lrms, i * block, j * block, block);
      const auto dl = std::clamp(1.0 - q2n(crop_ms(degraded, i * block, j * block, block), lr, block), 0.0, 1.0);
      const auto hr = crop_ms(fused, i * block * r, j * block * r, block * r);
      const auto pan = crop_pan(pair.pan, i * block * r, j * block * r, block * r);
      const auto pan_low = crop_pan(pan_lr, i * block, j * block, block);
      double high = 0, low = 0;
      for (std::size_t b = 0; b < fused.bands; ++b) {
        high += q_index(hr.band(b), pan.data, pan.height, pan.width, block * r);
        low += q_index(lr.band(b), pan_low.data, block, block, block);
      }
      const double ds = std::clamp(std::abs(high - low) / static_cast<double>(fused.bands), 0.0, 1.0);
      raster[i * cols + j] = static_cast<float>(hqnr(dl, ds));
    }
  return Tensor::from_data({rows, cols}, std::move(raster));
}

// ---------------------------------------------------------------------------
// Baseline resamplers

enum class ResampleMethod { nearest, bicubic };

namespace detail {

inline double catmull_rom(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct CubicTaps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

inline std::vector<CubicTaps> cubic_taps(std::size_t src, std::size_t dst) {
  std::vector<CubicTaps> taps(dst);
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  const auto last = static_cast<std::ptrdiff_t>(src) - 1;
  for (std::size_t i = 0; i < dst; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(pos));
    const double t = pos - static_cast<double>(base);
    for (std::ptrdiff_t k = 0; k < 4; ++k) {
      taps[i].index[k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(base - 1 + k, 0, last));
      taps[i].weight[k] = catmull_rom(t - static_cast<double>(k - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Half-pixel-aligned resampling to round(h*N) x round(w*N); bicubic uses the
/// Catmull-Rom kernel with clamped borders.
inline MsImage baseline_resample(const MsImage& img, double scale, ResampleMethod method) {
  if (!(scale > 0.0)) throw std::invalid_argument("baseline_resample: scale must be positive");
  const auto oh = static_cast<std::size_t>(std::floor(static_cast<double>(img.height) * scale + 0.5));
  const auto ow = static_cast<std::size_t>(std::floor(static_cast<double>(img.width) * scale + 0.5));
  if (oh == 0 || ow == 0) throw std::invalid_argument("baseline_resample: empty output");
  MsImage out(img.bands, oh, ow);
  if (method == ResampleMethod::nearest) {
    auto pick = [](std::size_t i, std::size_t src, std::size_t dst) {
      const auto idx = static_cast<std::size_t>(
          std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst)));
      return std::min(idx, src - 1);
    };
    for (std::size_t b = 0; b < img.bands; ++b)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          out.at(b, i, j) = img.at(b, pick(i, img.height, oh), pick(j, img.width, ow));
    return out;
  }
  const auto ty = detail::cubic_taps(img.height, oh);
  const auto tx = detail::cubic_taps(img.width, ow);
  for (std::size_t b = 0; b < img.bands; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0;
        for (std::size_t a = 0; a < 4; ++a)
          for (std::size_t c = 0; c < 4; ++c)
            acc += ty[i].weight[a] * tx[j].weight[c] * img.at(b, ty[i].index[a], tx[j].index[c]);
        out.at(b, i, j) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace inrpan

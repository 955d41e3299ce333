#pragma once

// Image data model, sensor registry, radiometric scaling and the array
// container format used for every on-disk artifact.
//
// Array container: one ASCII header line `dims=<d1>x<d2>x...` followed by
// the payload as raw little-endian 32-bit floats in row-major order.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inrpan/config.hpp"
#include "inrpan/tensor.hpp"

namespace inrpan {

static_assert(std::endian::native == std::endian::little,
              "array container I/O assumes a little-endian host");

class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Array container

inline void write_array(std::ostream& out, const Tensor& tensor) {
  out << "dims=";
  for (std::size_t i = 0; i < tensor.rank(); ++i) {
    if (i) out << 'x';
    out << tensor.dim(i);
  }
  out << '\n';
  auto data = tensor.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline Shape parse_dims(const std::string& header, const std::string& source) {
  if (header.rfind("dims=", 0) != 0) {
    throw FormatError(source + ": malformed header, expected `dims=...`");
  }
  Shape shape;
  const std::string rest = header.substr(5);
  std::size_t start = 0;
  while (true) {
    const auto end = rest.find('x', start);
    const std::string token =
        rest.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (token.empty() || token.size() > 12 ||
        token.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError(source + ": malformed dimension `" + token + "` in header");
    }
    shape.push_back(std::stoull(token));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return shape;
}

/// Reads one container from the current stream position.
inline Tensor read_array(std::istream& in, const std::string& source) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError(source + ": missing array header");
  Shape shape = parse_dims(header, source);
  const std::size_t count = shape_numel(shape);
  std::vector<float> data(count);
  const auto expected = static_cast<std::streamsize>(count * sizeof(float));
  in.read(reinterpret_cast<char*>(data.data()), expected);
  if (in.gcount() != expected) {
    throw FormatError(source + ": header " + shape_str(shape) + " expects " +
                      std::to_string(expected) + " payload bytes, found " +
                      std::to_string(in.gcount()));
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

inline void save_array(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_array(out, tensor);
  if (!out) throw FormatError("short write to " + path.string());
}

inline Tensor load_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Tensor tensor = read_array(in, path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after the " +
                      shape_str(tensor.shape()) + " payload");
  }
  return tensor;
}

// ---------------------------------------------------------------------------
// Images

/// Multispectral image stored band-sequential: data[(b * height + y) * width + x].
struct MsImage {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  MsImage() = default;
  MsImage(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : bands(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t b, std::size_t y, std::size_t x) {
    return data[(b * height + y) * width + x];
  }
  float at(std::size_t b, std::size_t y, std::size_t x) const {
    return data[(b * height + y) * width + x];
  }
  std::span<const float> band(std::size_t b) const {
    return std::span<const float>(data).subspan(b * height * width, height * width);
  }
  std::span<float> band(std::size_t b) {
    return std::span<float>(data).subspan(b * height * width, height * width);
  }

  /// [1, bands, height, width]
  Tensor to_tensor() const {
    return Tensor::from_data({1, bands, height, width}, data);
  }
  static MsImage from_tensor(const Tensor& t) {
    if (t.rank() == 4 && t.dim(0) == 1) return from_values(t.dim(1), t.dim(2), t.dim(3), t.to_vector());
    if (t.rank() == 3) return from_values(t.dim(0), t.dim(1), t.dim(2), t.to_vector());
    throw ShapeError("expected a [c,h,w] or [1,c,h,w] image, got " + shape_str(t.shape()));
  }
  static MsImage from_values(std::size_t c, std::size_t h, std::size_t w,
                             std::vector<float> values) {
    MsImage img;
    img.bands = c;
    img.height = h;
    img.width = w;
    if (values.size() != c * h * w) throw ShapeError("image payload size mismatch");
    img.data = std::move(values);
    return img;
  }
  /// On-disk form [bands, height, width].
  Tensor to_array() const { return Tensor::from_data({bands, height, width}, data); }
};

/// Single-band panchromatic image, row-major.
struct PanImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  PanImage() = default;
  PanImage(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), data(h * w, fill) {}

  float& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  /// [1, 1, height, width]
  Tensor to_tensor() const { return Tensor::from_data({1, 1, height, width}, data); }
  Tensor to_array() const { return Tensor::from_data({height, width}, data); }
  static PanImage from_tensor(const Tensor& t) {
    PanImage img;
    if (t.rank() == 2) {
      img.height = t.dim(0);
      img.width = t.dim(1);
    } else if (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 1) {
      img.height = t.dim(2);
      img.width = t.dim(3);
    } else {
      throw ShapeError("expected a [h,w] or [1,1,h,w] PAN image, got " + shape_str(t.shape()));
    }
    img.data = t.to_vector();
    return img;
  }
  /// The same single band viewed as a one-band MsImage.
  MsImage as_ms() const { return MsImage::from_values(1, height, width, data); }
};

// ---------------------------------------------------------------------------
// Sensors

struct SensorSpec {
  std::string name;
  std::size_t bands = 0;
  std::size_t ratio = 4;
  std::vector<double> nyquist_gains;
  double pan_nyquist_gain = 0.3;
  int bit_depth = 11;

  void validate() const {
    if (bands == 0) throw std::invalid_argument("sensor `" + name + "`: zero bands");
    if (ratio < 2) throw std::invalid_argument("sensor `" + name + "`: ratio must be >= 2");
    if (nyquist_gains.size() != bands) {
      throw std::invalid_argument("sensor `" + name + "`: " +
                                  std::to_string(nyquist_gains.size()) +
                                  " Nyquist gains for " + std::to_string(bands) + " bands");
    }
    for (double g : nyquist_gains)
      if (!(g > 0.0 && g < 1.0)) throw std::invalid_argument("sensor `" + name + "`: Nyquist gain outside (0,1)");
    if (!(pan_nyquist_gain > 0.0 && pan_nyquist_gain < 1.0))
      throw std::invalid_argument("sensor `" + name + "`: PAN Nyquist gain outside (0,1)");
    if (bit_depth < 1 || bit_depth > 31) throw std::invalid_argument("sensor `" + name + "`: bad bit depth");
  }

  KeyValueConfig to_config() const {
    KeyValueConfig cfg;
    cfg.set("name", name);
    cfg.set("bands", std::to_string(bands));
    cfg.set("ratio", std::to_string(ratio));
    cfg.set("nyquist_gains", join_list(nyquist_gains));
    cfg.set("pan_nyquist_gain", join_list(std::vector<double>{pan_nyquist_gain}));
    cfg.set("bit_depth", std::to_string(bit_depth));
    return cfg;
  }

  static SensorSpec from_config(const KeyValueConfig& cfg) {
    SensorSpec s;
    s.name = cfg.get_string("name");
    s.bands = static_cast<std::size_t>(cfg.get_int("bands"));
    s.ratio = static_cast<std::size_t>(cfg.get_int("ratio"));
    s.nyquist_gains = cfg.get_list("nyquist_gains");
    s.pan_nyquist_gain = cfg.get_double("pan_nyquist_gain");
    s.bit_depth = static_cast<int>(cfg.get_int("bit_depth"));
    s.validate();
    return s;
  }

  /// Applies `sensor.*` overrides from a run configuration.
  void apply_overrides(const KeyValueConfig& cfg) {
    if (cfg.has("sensor.nyquist_gains")) {
      auto gains = cfg.get_list("sensor.nyquist_gains");
      if (gains.size() == 1) gains.assign(bands, gains.front());
      nyquist_gains = std::move(gains);
    }
    pan_nyquist_gain = cfg.get_double("sensor.pan_nyquist_gain", pan_nyquist_gain);
    bit_depth = static_cast<int>(cfg.get_int("sensor.bit_depth", bit_depth));
    validate();
  }
};

inline constexpr double kDefaultNyquistGain = 0.30;

/// Built-in sensors: `wv3-like` (8 bands), `gf2-like` (4 bands) and
/// `synthetic` (band count from `bands`, default 4). All use r = 4.
inline SensorSpec sensor_by_name(const std::string& name, std::size_t bands = 0) {
  SensorSpec s;
  s.name = name;
  s.ratio = 4;
  s.pan_nyquist_gain = kDefaultNyquistGain;
  if (name == "wv3-like") {
    s.bands = 8;
    s.bit_depth = 11;
  } else if (name == "gf2-like") {
    s.bands = 4;
    s.bit_depth = 10;
  } else if (name == "synthetic") {
    s.bands = bands == 0 ? 4 : bands;
    s.bit_depth = 11;
  } else {
    throw std::invalid_argument("unknown sensor `" + name +
                                "` (known: wv3-like, gf2-like, synthetic)");
  }
  if (bands != 0 && bands != s.bands) {
    throw std::invalid_argument("sensor `" + name + "` has " + std::to_string(s.bands) +
                                " bands, requested " + std::to_string(bands));
  }
  s.nyquist_gains.assign(s.bands, kDefaultNyquistGain);
  return s;
}

// ---------------------------------------------------------------------------
// Pairs

struct ImagePair {
  PanImage pan;
  MsImage lrms;
  SensorSpec sensor;
  std::optional<MsImage> ground_truth;

  /// Checks H = r*h, W = r*w and band agreement.
  void validate() const {
    sensor.validate();
    if (lrms.bands != sensor.bands) {
      throw ShapeError("LRMS has " + std::to_string(lrms.bands) + " bands, sensor `" +
                       sensor.name + "` has " + std::to_string(sensor.bands));
    }
    if (lrms.height == 0 || lrms.width == 0 || pan.height != sensor.ratio * lrms.height ||
        pan.width != sensor.ratio * lrms.width) {
      throw ShapeError("PAN " + std::to_string(pan.height) + "x" + std::to_string(pan.width) +
                       " is not " + std::to_string(sensor.ratio) + "x the LRMS " +
                       std::to_string(lrms.height) + "x" + std::to_string(lrms.width));
    }
    if (ground_truth && (ground_truth->bands != lrms.bands || ground_truth->height != pan.height ||
                         ground_truth->width != pan.width)) {
      throw ShapeError("ground truth does not match the PAN grid and band count");
    }
  }
};

inline void save_pair(const std::filesystem::path& dir, const ImagePair& pair) {
  std::filesystem::create_directories(dir);
  save_array(dir / "pan.arr", pair.pan.to_array());
  save_array(dir / "lrms.arr", pair.lrms.to_array());
  if (pair.ground_truth) save_array(dir / "gt.arr", pair.ground_truth->to_array());
  pair.sensor.to_config().save(dir / "sensor.cfg");
}

inline ImagePair load_pair(const std::filesystem::path& dir) {
  ImagePair pair;
  pair.sensor = SensorSpec::from_config(KeyValueConfig::load(dir / "sensor.cfg"));
  pair.pan = PanImage::from_tensor(load_array(dir / "pan.arr"));
  pair.lrms = MsImage::from_tensor(load_array(dir / "lrms.arr"));
  if (std::filesystem::exists(dir / "gt.arr")) {
    pair.ground_truth = MsImage::from_tensor(load_array(dir / "gt.arr"));
  }
  pair.validate();
  return pair;
}

// ---------------------------------------------------------------------------
// Radiometry

inline std::vector<float> normalize(std::span<const std::uint32_t> raw, int bit_depth) {
  const std::uint32_t max_value = (std::uint32_t{1} << bit_depth) - 1;
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > max_value) {
      throw std::out_of_range("raw value " + std::to_string(raw[i]) + " exceeds " +
                              std::to_string(bit_depth) + "-bit range");
    }
    out[i] = static_cast<float>(static_cast<double>(raw[i]) / max_value);
  }
  return out;
}

/// Clamps to [0, 1], rescales to the integer range and rounds.
inline std::vector<std::uint32_t> denormalize(std::span<const float> values, int bit_depth) {
  const double max_value = static_cast<double>((std::uint32_t{1} << bit_depth) - 1);
  std::vector<std::uint32_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(values[i]), 0.0, 1.0);
    out[i] = static_cast<std::uint32_t>(std::lround(v * max_value));
  }
  return out;
}

}  // namespace inrpan

#pragma once

// INR fusion backbone: residual conv encoder on the PAN grid, a coordinate
// MLP queried at arbitrary target coordinates with area-weighted blending of
// the four surrounding feature points, and a two-layer conv decoder.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "inrpan/config.hpp"
#include "inrpan/imagery.hpp"
#include "inrpan/ops.hpp"

namespace inrpan {

struct InrconvHyper {
  std::size_t bands = 4;
  std::size_t ratio = 4;
  std::size_t feature_dim = 64;
  std::size_t res_blocks = 4;
  std::vector<std::size_t> mlp_hidden{256, 256, 256, 256};
  std::size_t query_dim = 64;

  /// Width of one MLP input row: feature, relative coordinate, cell size.
  std::size_t mlp_input() const { return feature_dim + 4; }

  void validate() const {
    if (bands == 0 || ratio == 0 || feature_dim == 0 || query_dim == 0) {
      throw std::invalid_argument("model hyperparameters must be positive");
    }
    for (auto w : mlp_hidden)
      if (w == 0) throw std::invalid_argument("MLP widths must be positive");
  }

  bool operator==(const InrconvHyper&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters

class InrconvWeights {
 public:
  InrconvHyper hyper;

  /// Kaiming-style uniform fan-in initialization from `seed`.
  static InrconvWeights initialize(const InrconvHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    InrconvWeights w;
    w.hyper = hyper;
    std::mt19937_64 rng(seed);
    for (const auto& spec : layout(hyper)) {
      const std::size_t numel = shape_numel(spec.shape);
      std::vector<float> values(numel);
      const double bound = spec.is_bias ? 1.0 / std::sqrt(static_cast<double>(spec.fan_in))
                                        : std::sqrt((spec.feeds_relu ? 6.0 : 3.0) /
                                                    static_cast<double>(spec.fan_in));
      for (auto& v : values) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = static_cast<float>((2.0 * u - 1.0) * bound);
      }
      w.add(spec.name, Tensor::from_data(spec.shape, std::move(values), true));
    }
    return w;
  }

  const Tensor& get(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return tensors_[i];
    throw std::out_of_range("no parameter named `" + name + "`");
  }

  const std::vector<std::string>& names() const { return names_; }
  std::span<Tensor> parameters() { return tensors_; }
  std::span<const Tensor> parameters() const { return tensors_; }

  void add(std::string name, Tensor tensor) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(tensor));
  }

  /// Deep copy with fresh, gradient-tracking leaves.
  InrconvWeights clone() const {
    InrconvWeights copy;
    copy.hyper = hyper;
    for (std::size_t i = 0; i < names_.size(); ++i)
      copy.add(names_[i], Tensor::from_data(tensors_[i].shape(), tensors_[i].to_vector(), true));
    return copy;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  bool same_values(const InrconvWeights& other) const {
    if (!(hyper == other.hyper) || names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto a = tensors_[i].data();
      auto b = other.tensors_[i].data();
      if (tensors_[i].shape() != other.tensors_[i].shape() || !std::equal(a.begin(), a.end(), b.begin()))
        return false;
    }
    return true;
  }

  struct ParamSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in;
    bool is_bias;
    bool feeds_relu;
  };

  /// Every parameter's name and shape, in storage order.
  static std::vector<ParamSpec> layout(const InrconvHyper& h) {
    std::vector<ParamSpec> specs;
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, bool relu) {
      specs.push_back({name + ".weight", {out, in, 3, 3}, in * 9, false, relu});
      specs.push_back({name + ".bias", {out}, in * 9, true, relu});
    };
    const std::size_t d = h.feature_dim;
    conv("encoder.head", d, 2 * h.bands, false);
    for (std::size_t b = 0; b < h.res_blocks; ++b) {
      conv("encoder.block" + std::to_string(b) + ".conv1", d, d, true);
      conv("encoder.block" + std::to_string(b) + ".conv2", d, d, false);
    }
    conv("encoder.tail", d, d, false);
    std::size_t in = h.mlp_input();
    for (std::size_t l = 0; l <= h.mlp_hidden.size(); ++l) {
      const bool hidden = l < h.mlp_hidden.size();
      const std::size_t out = hidden ? h.mlp_hidden[l] : h.query_dim;
      const std::string name = "mlp.layer" + std::to_string(l);
      specs.push_back({name + ".weight", {in, out}, in, false, hidden});
      specs.push_back({name + ".bias", {out}, in, true, hidden});
      in = out;
    }
    conv("decoder.conv1", h.query_dim, h.query_dim, true);
    conv("decoder.conv2", h.bands, h.query_dim, false);
    return specs;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

inline std::filesystem::path manifest_path(const std::filesystem::path& weights_file) {
  auto p = weights_file;
  return p.replace_extension(".manifest");
}

/// Writes `weights_file` (one array container per parameter, in manifest
/// order) and the plain-text manifest next to it.
inline void save_weights(const std::filesystem::path& weights_file, const InrconvWeights& w) {
  if (weights_file.has_parent_path()) std::filesystem::create_directories(weights_file.parent_path());
  std::ofstream out(weights_file, std::ios::binary);
  if (!out) throw FormatError("cannot write " + weights_file.string());
  std::ofstream manifest(manifest_path(weights_file));
  if (!manifest) throw FormatError("cannot write " + manifest_path(weights_file).string());
  manifest << "# INRConv weights manifest\n";
  manifest << "bands = " << w.hyper.bands << '\n';
  manifest << "ratio = " << w.hyper.ratio << '\n';
  manifest << "feature_dim = " << w.hyper.feature_dim << '\n';
  manifest << "res_blocks = " << w.hyper.res_blocks << '\n';
  manifest << "mlp_hidden = " << join_list(w.hyper.mlp_hidden) << '\n';
  manifest << "query_dim = " << w.hyper.query_dim << '\n';
  manifest << "parameters = " << w.names().size() << '\n';
  for (std::size_t i = 0; i < w.names().size(); ++i) {
    const Tensor& t = w.parameters()[i];
    manifest << "param." << i << " = " << w.names()[i] << ' ' << shape_str(t.shape()) << '\n';
    write_array(out, t);
  }
  if (!out || !manifest) throw FormatError("short write of weights to " + weights_file.string());
}

inline InrconvWeights load_weights(const std::filesystem::path& weights_file) {
  const auto cfg = KeyValueConfig::load(manifest_path(weights_file));
  InrconvHyper h;
  h.bands = static_cast<std::size_t>(cfg.get_int("bands"));
  h.ratio = static_cast<std::size_t>(cfg.get_int("ratio"));
  h.feature_dim = static_cast<std::size_t>(cfg.get_int("feature_dim"));
  h.res_blocks = static_cast<std::size_t>(cfg.get_int("res_blocks"));
  h.mlp_hidden.clear();
  if (!cfg.get_string("mlp_hidden").empty())
    for (double v : cfg.get_list("mlp_hidden")) h.mlp_hidden.push_back(static_cast<std::size_t>(v));
  h.query_dim = static_cast<std::size_t>(cfg.get_int("query_dim"));
  h.validate();

  const auto specs = InrconvWeights::layout(h);
  if (static_cast<std::size_t>(cfg.get_int("parameters")) != specs.size()) {
    throw FormatError(manifest_path(weights_file).string() + ": parameter count does not match hyperparameters");
  }
  std::ifstream in(weights_file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + weights_file.string());
  InrconvWeights w;
  w.hyper = h;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string listed = cfg.get_string("param." + std::to_string(i));
    const std::string expected = specs[i].name + ' ' + shape_str(specs[i].shape);
    if (listed != expected) {
      throw FormatError("manifest entry " + std::to_string(i) + " is `" + listed + "`, expected `" +
                        expected + "`");
    }
    Tensor t = read_array(in, weights_file.string() + " (" + specs[i].name + ")");
    if (t.shape() != specs[i].shape) {
      throw FormatError(weights_file.string() + ": " + specs[i].name + " stored as " +
                        shape_str(t.shape()) + ", manifest says " + shape_str(specs[i].shape));
    }
    w.add(specs[i].name, Tensor::from_data(t.shape(), t.to_vector(), true));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(weights_file.string() + ": trailing bytes after last parameter");
  }
  return w;
}

// ---------------------------------------------------------------------------
// Coordinates

/// Output extent for `size` pixels at scale `scale`, rounded half up.
inline std::size_t scaled_extent(std::size_t size, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale factor must be positive");
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(size) * scale + 0.5));
  if (n == 0) throw std::invalid_argument("scale factor yields an empty output");
  return n;
}

/// Pixel-center coordinates of the target grid in [-1, 1]^2 plus its cell size.
struct CoordGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> ys;
  std::vector<double> xs;
  double cell_y = 0.0;
  double cell_x = 0.0;
};

inline CoordGrid make_coord_grid(std::size_t height, std::size_t width, double scale) {
  CoordGrid grid;
  grid.rows = scaled_extent(height, scale);
  grid.cols = scaled_extent(width, scale);
  const double rows = static_cast<double>(grid.rows);
  const double cols = static_cast<double>(grid.cols);
  for (std::size_t i = 0; i < grid.rows; ++i) grid.ys.push_back(-1.0 + (2.0 * i + 1.0) / rows);
  for (std::size_t j = 0; j < grid.cols; ++j) grid.xs.push_back(-1.0 + (2.0 * j + 1.0) / cols);
  grid.cell_y = 2.0 / rows;
  grid.cell_x = 2.0 / cols;
  return grid;
}

/// The four feature points around a query, in the order top-left,
/// top-right, bottom-left, bottom-right, with their blending weights. The
/// weight of each point is the area of the rectangle spanned by the query and
/// the diagonally opposite point, normalized by the total.
struct NeighborSet {
  std::array<std::size_t, 4> rows;
  std::array<std::size_t, 4> cols;
  std::array<float, 4> weights;
  std::array<double, 4> rel_y;
  std::array<double, 4> rel_x;
};

namespace detail {

struct AxisNeighbors {
  std::size_t lo;
  std::size_t hi;
  double w_lo;
  double w_hi;
  double rel_lo;
  double rel_hi;
};

inline AxisNeighbors axis_neighbors(double q, std::size_t size) {
  const double n = static_cast<double>(size);
  const double pos = (q + 1.0) * n / 2.0 - 0.5;
  std::size_t lo = 0;
  if (size > 1) {
    const double f = std::floor(pos);
    lo = f <= 0.0 ? 0 : std::min(static_cast<std::size_t>(f), size - 2);
  }
  const std::size_t hi = size > 1 ? lo + 1 : lo;
  const double z_lo = -1.0 + (2.0 * lo + 1.0) / n;
  const double z_hi = -1.0 + (2.0 * hi + 1.0) / n;
  const double d_lo = std::abs(q - z_lo);
  const double d_hi = std::abs(q - z_hi);
  const double total = d_lo + d_hi;
  AxisNeighbors a{lo, hi, 0.5, 0.5, q - z_lo, q - z_hi};
  if (total > 0.0) {
    a.w_lo = d_hi / total;
    a.w_hi = d_lo / total;
  }
  return a;
}

}  // namespace detail

inline NeighborSet find_neighbors(double qy, double qx, std::size_t height, std::size_t width) {
  constexpr double tol = 1e-6;
  if (!(std::abs(qy) <= 1.0 + tol && std::abs(qx) <= 1.0 + tol)) {
    throw std::out_of_range("query coordinate outside [-1, 1]^2");
  }
  const auto y = detail::axis_neighbors(std::clamp(qy, -1.0, 1.0), height);
  const auto x = detail::axis_neighbors(std::clamp(qx, -1.0, 1.0), width);
  NeighborSet s;
  s.rows = {y.lo, y.lo, y.hi, y.hi};
  s.cols = {x.lo, x.hi, x.lo, x.hi};
  s.weights = {static_cast<float>(y.w_lo * x.w_lo), static_cast<float>(y.w_lo * x.w_hi),
               static_cast<float>(y.w_hi * x.w_lo), static_cast<float>(y.w_hi * x.w_hi)};
  s.rel_y = {y.rel_lo, y.rel_lo, y.rel_hi, y.rel_hi};
  s.rel_x = {x.rel_lo, x.rel_hi, x.rel_lo, x.rel_hi};
  return s;
}

// ---------------------------------------------------------------------------
// Model

class InrConv {
 public:
  explicit InrConv(InrconvWeights weights) : weights_(std::move(weights)) {}

  const InrconvWeights& weights() const { return weights_; }
  InrconvWeights& weights() { return weights_; }
  const InrconvHyper& hyper() const { return weights_.hyper; }

  /// pan [1,1,H,W], lrms [1,c,h,w] with H = r*h -> features [1,D,H,W].
  Tensor encode(const Tensor& pan, const Tensor& lrms) const {
    const auto& h = hyper();
    if (pan.rank() != 4 || lrms.rank() != 4 || pan.dim(1) != 1) {
      throw ShapeError("encode: expected pan [1,1,H,W] and lrms [1,c,h,w], got " +
                       shape_str(pan.shape()) + " and " + shape_str(lrms.shape()));
    }
    if (lrms.dim(1) != h.bands) {
      throw ShapeError("encode: model expects " + std::to_string(h.bands) + " bands, LRMS has " +
                       std::to_string(lrms.dim(1)));
    }
    if (pan.dim(2) != h.ratio * lrms.dim(2) || pan.dim(3) != h.ratio * lrms.dim(3)) {
      throw ShapeError("encode: PAN " + shape_str(pan.shape()) + " is not " +
                       std::to_string(h.ratio) + "x the LRMS " + shape_str(lrms.shape()));
    }
    const std::vector<Tensor> copies(h.bands, pan);
    Tensor pan_stack = concat(copies, 1);
    Tensor lrms_up = bilinear_resize(lrms, pan.dim(2), pan.dim(3));
    Tensor x = concat({pan_stack, lrms_up}, 1);

    Tensor head = conv("encoder.head", x);
    Tensor body = head;
    for (std::size_t b = 0; b < h.res_blocks; ++b) {
      const std::string prefix = "encoder.block" + std::to_string(b);
      Tensor t = relu(conv(prefix + ".conv1", body));
      body = add(body, conv(prefix + ".conv2", t));
    }
    return add(conv("encoder.tail", body), head);
  }

  /// Blends MLP responses of the four neighbors of each point.
  /// features [1,D,H,W] -> [points, query_dim].
  Tensor query_points(const Tensor& features, std::span<const std::array<double, 2>> points,
                      double cell_y, double cell_x) const {
    const std::size_t height = features.dim(2);
    const std::size_t width = features.dim(3);
    Tensor table = transpose2d(reshape(features, {features.dim(1), height * width}));
    return query_table(table, height, width, points, cell_y, cell_x);
  }

  /// Dense query over a target grid: features [1,D,H,W] -> [1,Q,rows,cols].
  Tensor query_all(const Tensor& features, const CoordGrid& grid) const {
    const std::size_t height = features.dim(2);
    const std::size_t width = features.dim(3);
    Tensor table = transpose2d(reshape(features, {features.dim(1), height * width}));
    std::vector<std::array<double, 2>> points;
    points.reserve(grid.rows * grid.cols);
    for (double y : grid.ys)
      for (double x : grid.xs) points.push_back({y, x});

    Tensor rows;
    if (grad_enabled() || points.size() <= kInferenceChunk) {
      rows = query_table(table, height, width, points, grid.cell_y, grid.cell_x);
    } else {
      // Without a tape the blocks are independent; bound peak memory.
      std::vector<Tensor> blocks;
      for (std::size_t start = 0; start < points.size(); start += kInferenceChunk) {
        const std::size_t n = std::min(kInferenceChunk, points.size() - start);
        blocks.push_back(query_table(table, height, width,
                                     std::span(points).subspan(start, n), grid.cell_y, grid.cell_x));
      }
      rows = concat(blocks, 0);
    }
    return reshape(transpose2d(rows), {1, hyper().query_dim, grid.rows, grid.cols});
  }

  Tensor decode(const Tensor& features) const {
    return conv("decoder.conv2", relu(conv("decoder.conv1", features)));
  }

  /// pan [1,1,H,W], lrms [1,c,h,w] -> [1, c, round(H*scale), round(W*scale)].
  Tensor forward(const Tensor& pan, const Tensor& lrms, double scale) const {
    Tensor features = encode(pan, lrms);
    return decode(query_all(features, make_coord_grid(features.dim(2), features.dim(3), scale)));
  }

  /// Tape-free forward with the output clamped to [0, 1] for export.
  MsImage infer(const PanImage& pan, const MsImage& lrms, double scale) const {
    NoGradGuard guard;
    MsImage out = MsImage::from_tensor(forward(pan.to_tensor(), lrms.to_tensor(), scale));
    for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
  }

  static constexpr std::size_t kInferenceChunk = 8192;

 private:
  Tensor conv(const std::string& name, const Tensor& x) const {
    return conv2d(x, weights_.get(name + ".weight"), 1, weights_.get(name + ".bias"));
  }

  Tensor query_table(const Tensor& table, std::size_t height, std::size_t width,
                     std::span<const std::array<double, 2>> points, double cell_y,
                     double cell_x) const {
    const std::size_t m = points.size();
    std::vector<std::uint32_t> index(4 * m);
    std::vector<float> blend(4 * m);
    std::vector<float> extra(4 * m * 4);
    // Relative offsets and cell size enter the MLP in feature-cell units.
    const double sy = static_cast<double>(height) / 2.0;
    const double sx = static_cast<double>(width) / 2.0;
    for (std::size_t i = 0; i < m; ++i) {
      const NeighborSet s = find_neighbors(points[i][0], points[i][1], height, width);
      for (std::size_t t = 0; t < 4; ++t) {
        const std::size_t row = t * m + i;
        index[row] = static_cast<std::uint32_t>(s.rows[t] * width + s.cols[t]);
        blend[row] = s.weights[t];
        float* e = extra.data() + row * 4;
        e[0] = static_cast<float>(s.rel_y[t] * sy);
        e[1] = static_cast<float>(s.rel_x[t] * sx);
        e[2] = static_cast<float>(cell_y * sy);
        e[3] = static_cast<float>(cell_x * sx);
      }
    }
    Tensor h = concat({gather_rows(table, std::move(index)),
                       Tensor::from_data({4 * m, 4}, std::move(extra))},
                      1);
    const std::size_t layers = hyper().mlp_hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string name = "mlp.layer" + std::to_string(l);
      h = add_bias(matmul(h, weights_.get(name + ".weight")), weights_.get(name + ".bias"));
      if (l + 1 < layers) h = relu(h);
    }
    return weighted_group_sum(h, std::move(blend), 4);
  }

  InrconvWeights weights_;
};

}  // namespace inrpan

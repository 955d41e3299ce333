#pragma once

// Differentiable ops over inrpan::Tensor. Image tensors use [B, C, H, W]
// layout; matrices are row-major [rows, cols].

#include <Eigen/Core>

#include <cstdint>
#include <optional>

#include "inrpan/tensor.hpp"

namespace inrpan {

namespace detail {

using RowMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

// Half-sample symmetric extension: ... c b a | a b c ... z | z y x ...
inline std::ptrdiff_t mirror_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               const auto& g = self.grad;
                               for (std::size_t p = 0; p < 2; ++p) {
                                 if (float* d = detail::parent_grad(self, p)) {
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     d[i] += g[i];
                                 }
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b},
                             [](detail::Node& self) {
                               const auto& g = self.grad;
                               if (float* d = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   d[i] += g[i];
                               if (float* d = detail::parent_grad(self, 1))
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   d[i] -= g[i];
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(
      "mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& g = self.grad;
        const auto& x = self.parents[0]->value;
        const auto& y = self.parents[1]->value;
        if (float* d = detail::parent_grad(self, 0))
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
        if (float* d = detail::parent_grad(self, 1))
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      });
}

inline Tensor scale(const Tensor& a, float factor) {
  Buffer out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result("scale", a.shape(), std::move(out), {a},
                             [factor](detail::Node& self) {
                               if (float* d = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size();
                                      ++i)
                                   d[i] += factor * self.grad[i];
                             });
}

/// When installed, relu and l1_loss append their branch masks. Lets a gradient
/// check tell whether a perturbation moved across a kink.
class BranchTrace {
 public:
  BranchTrace() : previous_(slot()) { slot() = this; }
  ~BranchTrace() { slot() = previous_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::vector<bool> mask;

  static BranchTrace*& slot() {
    thread_local BranchTrace* active = nullptr;
    return active;
  }

 private:
  BranchTrace* previous_;
};

inline Tensor relu(const Tensor& a) {
  Buffer out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (BranchTrace* trace = BranchTrace::slot())
    for (float v : x) trace->mask.push_back(v > 0.0f);
  return detail::make_result("relu", a.shape(), std::move(out), {a},
                             [](detail::Node& self) {
                               float* d = detail::parent_grad(self, 0);
                               if (!d) return;
                               const auto& x = self.parents[0]->value;
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 if (x[i] > 0.0f) d[i] += self.grad[i];
                             });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (float v : a.data()) total += v;
  return detail::make_result("sum", {1}, {static_cast<float>(total)}, {a},
                             [](detail::Node& self) {
                               float* d = detail::parent_grad(self, 0);
                               if (!d) return;
                               const float g = self.grad[0];
                               const std::size_t n = self.parents[0]->value.size();
                               for (std::size_t i = 0; i < n; ++i) d[i] += g;
                             });
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

/// Mean absolute difference. The target is treated as a constant.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "l1_loss");
  if (target.requires_grad()) {
    throw std::invalid_argument("l1_loss: target must not require a gradient");
  }
  auto p = pred.data();
  auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
  if (BranchTrace* trace = BranchTrace::slot())
    for (std::size_t i = 0; i < p.size(); ++i) trace->mask.push_back(p[i] > t[i]);
  const double n = static_cast<double>(p.size());
  return detail::make_result(
      "l1_loss", {1}, {static_cast<float>(total / n)}, {pred, target},
      [n](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        const auto& p = self.parents[0]->value;
        const auto& t = self.parents[1]->value;
        const float g = static_cast<float>(self.grad[0] / n);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const float diff = p[i] - t[i];
          if (diff > 0.0f) d[i] += g;
          else if (diff < 0.0f) d[i] -= g;
        }
      });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  return detail::make_result("reshape", std::move(shape), Buffer(a.data().begin(), a.data().end()), {a},
                             [](detail::Node& self) {
                               if (float* d = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   d[i] += self.grad[i];
                             });
}

inline Tensor transpose2d(const Tensor& a) {
  detail::require_rank(a, 2, "transpose2d");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  Buffer out(a.numel());
  detail::MatMap(out.data(), cols, rows) =
      detail::ConstMatMap(a.data().data(), rows, cols).transpose();
  return detail::make_result(
      "transpose2d", {cols, rows}, std::move(out), {a},
      [rows, cols](detail::Node& self) {
        if (float* d = detail::parent_grad(self, 0)) {
          detail::MatMap(d, rows, cols) +=
              detail::ConstMatMap(self.grad.data(), cols, rows).transpose();
        }
      });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  Buffer out(m * n);
  detail::MatMap(out.data(), m, n).noalias() =
      detail::ConstMatMap(a.data().data(), m, k) *
      detail::ConstMatMap(b.data().data(), k, n);
  return detail::make_result(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        detail::ConstMatMap g(self.grad.data(), m, n);
        if (float* d = detail::parent_grad(self, 0)) {
          detail::MatMap(d, m, k).noalias() +=
              g * detail::ConstMatMap(self.parents[1]->value.data(), k, n)
                      .transpose();
        }
        if (float* d = detail::parent_grad(self, 1)) {
          detail::MatMap(d, k, n).noalias() +=
              detail::ConstMatMap(self.parents[0]->value.data(), m, k)
                  .transpose() *
              g;
        }
      });
}

/// [M, N] + bias[N] broadcast over rows.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_rank(a, 2, "add_bias");
  const std::size_t m = a.dim(0);
  const std::size_t n = a.dim(1);
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias of " + shape_str(bias.shape()) +
                     " for matrix " + shape_str(a.shape()));
  }
  Buffer out(a.data().begin(), a.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return detail::make_result(
      "add_bias", a.shape(), std::move(out), {a, bias},
      [m, n](detail::Node& self) {
        const auto& g = self.grad;
        if (float* d = detail::parent_grad(self, 0))
          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        if (float* d = detail::parent_grad(self, 1))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
      });
}

/// Concatenates along `axis`; every other dimension must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " does not match " +
                         shape_str(first) + " outside axis " +
                         std::to_string(axis));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = shape[axis] * inner;
  Buffer out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.data() + o * widths[p], widths[p],
                  out.data() + o * row + offset);
    offset += widths[p];
  }
  return detail::make_result(
      "concat", std::move(shape), std::move(out), parts,
      [widths, outer, row](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          if (float* d = detail::parent_grad(self, p)) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < widths[p]; ++i)
                d[o * widths[p] + i] += self.grad[o * row + offset + i];
          }
          offset += widths[p];
        }
      });
}

/// Rows of `table` [R, D] picked by `rows`; backward scatter-adds.
inline Tensor gather_rows(const Tensor& table,
                          std::vector<std::uint32_t> rows) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t width = table.dim(1);
  Buffer out(rows.size() * width);
  auto src = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= table.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(src.data() + rows[i] * width, width, out.data() + i * width);
  }
  const std::size_t count = rows.size();
  return detail::make_result(
      "gather_rows", {count, width}, std::move(out), {table},
      [rows = std::move(rows), width](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const float* g = self.grad.data() + i * width;
          float* dst = d + rows[i] * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += g[j];
        }
      });
}

/// out[m] = sum_g weights[g*M + m] * values[g*M + m] for values [G*M, D].
/// The weights are constants.
inline Tensor weighted_group_sum(const Tensor& values,
                                 std::vector<float> weights,
                                 std::size_t groups) {
  detail::require_rank(values, 2, "weighted_group_sum");
  const std::size_t rows = values.dim(0);
  const std::size_t width = values.dim(1);
  if (groups == 0 || rows % groups != 0 || weights.size() != rows) {
    throw ShapeError("weighted_group_sum: " + std::to_string(weights.size()) +
                     " weights and " + std::to_string(groups) +
                     " groups for values " + shape_str(values.shape()));
  }
  const std::size_t m = rows / groups;
  Buffer out(m * width, 0.0f);
  auto v = values.data();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < m; ++i) {
      const float w = weights[g * m + i];
      const float* src = v.data() + (g * m + i) * width;
      float* dst = out.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
    }
  return detail::make_result(
      "weighted_group_sum", {m, width}, std::move(out), {values},
      [weights = std::move(weights), groups, m, width](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        for (std::size_t g = 0; g < groups; ++g)
          for (std::size_t i = 0; i < m; ++i) {
            const float w = weights[g * m + i];
            const float* src = self.grad.data() + i * width;
            float* dst = d + (g * m + i) * width;
            for (std::size_t j = 0; j < width; ++j) dst[j] += w * src[j];
          }
      });
}

/// Stride-1 2-D cross-correlation with zero padding.
/// input [B, C, H, W], kernel [O, C, k, k], optional bias [O].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     std::size_t padding,
                     const std::optional<Tensor>& bias = std::nullopt) {
  detail::require_rank(input, 4, "conv2d");
  detail::require_rank(kernel, 4, "conv2d");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  const std::size_t out_channels = kernel.dim(0);
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(1) != channels) {
    throw ShapeError("conv2d: input has " + std::to_string(channels) +
                     " channels but kernel " + shape_str(kernel.shape()) +
                     " expects " + std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_str(kernel.shape()));
  }
  if (height + 2 * padding < k || width + 2 * padding < k) {
    throw ShapeError("conv2d: kernel larger than padded input " +
                     shape_str(input.shape()));
  }
  if (bias && bias->numel() != out_channels) {
    throw ShapeError("conv2d: bias of " + shape_str(bias->shape()) + " for " +
                     std::to_string(out_channels) + " output channels");
  }
  const std::size_t out_h = height + 2 * padding - k + 1;
  const std::size_t out_w = width + 2 * padding - k + 1;
  const std::size_t patch = channels * k * k;
  const std::size_t pixels = out_h * out_w;
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  // Column buffers are kept for the backward pass.
  auto columns = std::make_shared<Buffer>(batch * patch * pixels);
  auto x = input.data();
  for (std::size_t b = 0; b < batch; ++b) {
    float* col = columns->data() + b * patch * pixels;
    for (std::size_t c = 0; c < channels; ++c) {
      const float* plane = x.data() + (b * channels + c) * height * width;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          float* dst = col + ((c * k + ky) * k + kx) * pixels;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy + ky) - pad;
            float* row = dst + oy * out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
              std::fill_n(row, out_w, 0.0f);
              continue;
            }
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox + kx) - pad;
              row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width))
                            ? 0.0f
                            : plane[iy * width + ix];
            }
          }
        }
    }
  }

  Buffer out(batch * out_channels * pixels);
  detail::ConstMatMap weights(kernel.data().data(), out_channels, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::MatMap result(out.data() + b * out_channels * pixels, out_channels,
                          pixels);
    result.noalias() =
        weights * detail::ConstMatMap(columns->data() + b * patch * pixels,
                                      patch, pixels);
    if (bias) {
      auto bv = bias->data();
      for (std::size_t o = 0; o < out_channels; ++o) result.row(o).array() += bv[o];
    }
  }

  std::vector<Tensor> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  return detail::make_result(
      "conv2d", {batch, out_channels, out_h, out_w}, std::move(out),
      std::move(inputs),
      [=](detail::Node& self) {
        float* d_kernel = detail::parent_grad(self, 1);
        float* d_input = detail::parent_grad(self, 0);
        float* d_bias = self.parents.size() > 2 ? detail::parent_grad(self, 2)
                                                : nullptr;
        detail::ConstMatMap weights(self.parents[1]->value.data(), out_channels,
                                    patch);
        Buffer d_col(d_input ? patch * pixels : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::ConstMatMap g(self.grad.data() + b * out_channels * pixels,
                                out_channels, pixels);
          if (d_kernel) {
            detail::MatMap(d_kernel, out_channels, patch).noalias() +=
                g * detail::ConstMatMap(columns->data() + b * patch * pixels,
                                        patch, pixels)
                        .transpose();
          }
          if (d_bias) {
            for (std::size_t o = 0; o < out_channels; ++o) d_bias[o] += g.row(o).sum();
          }
          if (!d_input) continue;
          detail::MatMap(d_col.data(), patch, pixels).noalias() =
              weights.transpose() * g;
          for (std::size_t c = 0; c < channels; ++c) {
            float* plane = d_input + (b * channels + c) * height * width;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const float* src = d_col.data() + ((c * k + ky) * k + kx) * pixels;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy + ky) - pad;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                  for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox + kx) - pad;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                    plane[iy * width + ix] += src[oy * out_w + ox];
                  }
                }
              }
          }
        }
      });
}

namespace detail {

struct LinearTap {
  std::size_t lo;
  std::size_t hi;
  float frac;
};

// Half-pixel-aligned source positions for resizing `src` samples to `dst`.
inline std::vector<LinearTap> bilinear_taps(std::size_t src, std::size_t dst) {
  std::vector<LinearTap> taps(dst);
  const double ratio = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    pos = std::max(pos, 0.0);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= src - 1) {
      taps[i] = {src - 1, src - 1, 0.0f};
    } else {
      taps[i] = {lo, lo + 1, static_cast<float>(pos - static_cast<double>(lo))};
    }
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling of [B, C, H, W] with half-pixel-aligned centers.
inline Tensor bilinear_resize(const Tensor& input, std::size_t target_h,
                              std::size_t target_w) {
  detail::require_rank(input, 4, "bilinear_resize");
  if (target_h == 0 || target_w == 0) {
    throw std::invalid_argument("bilinear_resize: target size must be positive");
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  auto ty = detail::bilinear_taps(height, target_h);
  auto tx = detail::bilinear_taps(width, target_w);
  Buffer out(planes * target_h * target_w);
  auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * height * width;
    float* dst = out.data() + p * target_h * target_w;
    for (std::size_t i = 0; i < target_h; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < target_w; ++j) {
        const auto& b = tx[j];
        const float top = src[a.lo * width + b.lo] * (1 - b.frac) +
                          src[a.lo * width + b.hi] * b.frac;
        const float bottom = src[a.hi * width + b.lo] * (1 - b.frac) +
                             src[a.hi * width + b.hi] * b.frac;
        dst[i * target_w + j] = top * (1 - a.frac) + bottom * a.frac;
      }
    }
  }
  return detail::make_result(
      "bilinear_resize", {input.dim(0), input.dim(1), target_h, target_w},
      std::move(out), {input},
      [=](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        for (std::size_t p = 0; p < planes; ++p) {
          const float* g = self.grad.data() + p * target_h * target_w;
          float* dst = d + p * height * width;
          for (std::size_t i = 0; i < target_h; ++i) {
            const auto& a = ty[i];
            for (std::size_t j = 0; j < target_w; ++j) {
              const auto& b = tx[j];
              const float v = g[i * target_w + j];
              dst[a.lo * width + b.lo] += v * (1 - a.frac) * (1 - b.frac);
              dst[a.lo * width + b.hi] += v * (1 - a.frac) * b.frac;
              dst[a.hi * width + b.lo] += v * a.frac * (1 - b.frac);
              dst[a.hi * width + b.hi] += v * a.frac * b.frac;
            }
          }
        }
      });
}

/// Non-overlapping mean pooling by `factor` over [B, C, H, W].
inline Tensor avg_pool(const Tensor& input, std::size_t factor) {
  detail::require_rank(input, 4, "avg_pool");
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  if (factor == 0 || height % factor || width % factor) {
    throw ShapeError("avg_pool: factor " + std::to_string(factor) +
                     " does not divide " + shape_str(input.shape()));
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t oh = height / factor;
  const std::size_t ow = width / factor;
  const float norm = 1.0f / static_cast<float>(factor * factor);
  Buffer out(planes * oh * ow, 0.0f);
  auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx)
        out[(p * oh + y / factor) * ow + xx / factor] +=
            x[(p * height + y) * width + xx] * norm;
  return detail::make_result(
      "avg_pool", {input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
      [=](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < height; ++y)
            for (std::size_t xx = 0; xx < width; ++xx)
              d[(p * height + y) * width + xx] +=
                  self.grad[(p * oh + y / factor) * ow + xx / factor] * norm;
      });
}

namespace detail {

// One separable pass with mirror boundaries along rows (axis 0) or columns.
// `adjoint` scatters instead of gathers, giving the transposed operator.
inline void blur_pass(const float* src, float* dst, std::size_t height,
                      std::size_t width, std::span<const float> taps,
                      bool vertical, bool adjoint) {
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      if (!adjoint) {
        float acc = 0.0f;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const float tap = taps[static_cast<std::size_t>(t + radius)];
          const std::ptrdiff_t idx = vertical
                                         ? mirror_index(y + t, h) * w + x
                                         : y * w + mirror_index(x + t, w);
          acc += tap * src[idx];
        }
        dst[y * w + x] = acc;
      } else {
        const float g = src[y * w + x];
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const float tap = taps[static_cast<std::size_t>(t + radius)];
          const std::ptrdiff_t idx = vertical
                                         ? mirror_index(y + t, h) * w + x
                                         : y * w + mirror_index(x + t, w);
          dst[idx] += tap * g;
        }
      }
    }
}

}  // namespace detail

/// Per-channel separable filtering of [B, C, H, W] with mirror boundaries.
/// `taps[c]` is the odd-length 1-D kernel applied along both axes.
inline Tensor separable_blur(const Tensor& input,
                             std::vector<std::vector<float>> taps) {
  detail::require_rank(input, 4, "separable_blur");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  if (taps.size() != channels) {
    throw ShapeError("separable_blur: " + std::to_string(taps.size()) +
                     " kernels for " + std::to_string(channels) + " channels");
  }
  for (const auto& t : taps)
    if (t.size() % 2 == 0) throw ShapeError("separable_blur: even kernel length");
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  const std::size_t area = height * width;
  Buffer out(input.numel());
  Buffer scratch(area);
  auto x = input.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * area;
      detail::blur_pass(x.data() + off, scratch.data(), height, width, taps[c],
                        false, false);
      detail::blur_pass(scratch.data(), out.data() + off, height, width, taps[c],
                        true, false);
    }
  return detail::make_result(
      "separable_blur", input.shape(), std::move(out), {input},
      [taps = std::move(taps), batch, channels, height, width,
       area](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        Buffer scratch(area);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (b * channels + c) * area;
            std::fill(scratch.begin(), scratch.end(), 0.0f);
            detail::blur_pass(self.grad.data() + off, scratch.data(), height,
                              width, taps[c], true, true);
            detail::blur_pass(scratch.data(), d + off, height, width, taps[c],
                              false, true);
          }
      });
}

/// Keeps every `factor`-th sample starting at `offset` along H and W.
inline Tensor decimate(const Tensor& input, std::size_t factor,
                       std::size_t offset) {
  detail::require_rank(input, 4, "decimate");
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  if (factor == 0 || height % factor || width % factor) {
    throw ShapeError("decimate: factor " + std::to_string(factor) +
                     " does not divide " + shape_str(input.shape()));
  }
  if (offset >= factor) throw ShapeError("decimate: offset must be < factor");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t oh = height / factor;
  const std::size_t ow = width / factor;
  Buffer out(planes * oh * ow);
  auto x = input.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        out[(p * oh + y) * ow + xx] =
            x[(p * height + offset + y * factor) * width + offset + xx * factor];
  return detail::make_result(
      "decimate", {input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
      [=](detail::Node& self) {
        float* d = detail::parent_grad(self, 0);
        if (!d) return;
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
              d[(p * height + offset + y * factor) * width + offset +
                xx * factor] += self.grad[(p * oh + y) * ow + xx];
      });
}

}  // namespace inrpan

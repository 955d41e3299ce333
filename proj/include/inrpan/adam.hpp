#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "inrpan/tensor.hpp"

namespace inrpan {

struct AdamOptions {
  float learning_rate = 5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Moment buffers for one parameter list; empty until the first step.
struct AdamState {
  AdamOptions options;
  long step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

/// Bias-corrected Adam update of every parameter from its gradient buffer.
/// Parameters without a gradient buffer are treated as having zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.step == 0 && state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0f);
      state.second_moment.emplace_back(p.numel(), 0.0f);
    }
  }
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " +
                     std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() ||
        state.second_moment[i].size() != params[i].numel()) {
      throw ShapeError("adam_step: moment buffer size differs from parameter " +
                       std::to_string(i) + " " + shape_str(params[i].shape()));
    }
  }

  ++state.step;
  const auto& opt = state.options;
  const double correction1 = 1.0 - std::pow(double{opt.beta1}, state.step);
  const double correction2 = 1.0 - std::pow(double{opt.beta2}, state.step);
  const auto step_size = static_cast<float>(opt.learning_rate / correction1);
  const auto root_correction2 = static_cast<float>(std::sqrt(correction2));

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    auto value = p.mutable_data();
    auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const float g = grad[j];
      m[j] = opt.beta1 * m[j] + (1.0f - opt.beta1) * g;
      v[j] = opt.beta2 * v[j] + (1.0f - opt.beta2) * g * g;
      value[j] -= step_size * m[j] / (std::sqrt(v[j]) / root_correction2 + opt.epsilon);
    }
  }
}

}  // namespace inrpan

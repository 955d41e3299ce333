#pragma once

// Zero-shot training on a single PAN/LRMS pair with three supervision levels:
//   level 0: the full-resolution output, re-degraded, must match the LRMS;
//   level 1: the output from once-degraded inputs must match the LRMS;
//   level 2: from twice-degraded inputs, the x1 output must match the
//            once-degraded LRMS and the x4 output the original LRMS.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>

#include "inrpan/adam.hpp"
#include "inrpan/degradation.hpp"
#include "inrpan/inrconv.hpp"

namespace inrpan {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  float alpha = 1.0f;
  float beta = 1.0f;
  float gamma = 4.0f;
  int epochs = 500;
  float learning_rate = 5e-4f;
  LrSchedule schedule = LrSchedule::constant;
  std::uint64_t seed = 0;
  bool enable_l0 = true;
  bool enable_l1 = true;
  bool enable_l2 = true;
  std::size_t mtf_taps = kDefaultMtfTaps;

  /// Loss weights of the named band profile: `8band` (1, 1, 0.2) or
  /// `4band` (1, 1, 4).
  static TrainConfig for_profile(const std::string& profile) {
    TrainConfig cfg;
    if (profile == "8band") {
      cfg.gamma = 0.2f;
    } else if (profile == "4band") {
      cfg.gamma = 4.0f;
    } else {
      throw std::invalid_argument("unknown band profile `" + profile + "` (8band, 4band)");
    }
    return cfg;
  }

  /// Profile implied by a band count: more than four bands uses `8band`.
  static std::string profile_for_bands(std::size_t bands) { return bands > 4 ? "8band" : "4band"; }

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (!enable_l0 && !enable_l1 && !enable_l2) throw std::invalid_argument("at least one loss must be enabled");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  }

  float learning_rate_at(int epoch) const {
    if (schedule == LrSchedule::constant || epochs <= 1) return learning_rate;
    const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return static_cast<float>(0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * progress)));
  }
};

struct EpochRecord {
  int epoch = 0;
  float total = 0;
  float l0 = 0;
  float l1 = 0;
  float l2 = 0;
  double seconds = 0;
};

/// One record per completed epoch; disabled losses are logged as 0.
struct TrainLog {
  std::vector<EpochRecord> records;

  /// Mean total loss over the `window` epochs ending at `epoch` (1-based).
  double smoothed_total(int epoch, int window = 50) const {
    const int first = std::max(1, epoch - window + 1);
    double acc = 0;
    for (int e = first; e <= epoch; ++e) acc += records.at(static_cast<std::size_t>(e - 1)).total;
    return acc / (epoch - first + 1);
  }

  void write_csv(std::ostream& out) const {
    out << "epoch,total,l0,l1,l2,seconds\n";
    out << std::setprecision(9);
    for (const auto& r : records) {
      out << r.epoch << ',' << r.total << ',' << r.l0 << ',' << r.l1 << ',' << r.l2 << ','
          << std::setprecision(6) << r.seconds << std::setprecision(9) << '\n';
    }
  }

  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_csv(out);
  }
};

/// Constant tensors every epoch reuses. Reduced levels are only built when
/// a loss that needs them is enabled.
struct TrainingInputs {
  Tensor pan;
  Tensor lrms;
  MtfKernel band_kernel;
  std::size_t ratio = 4;
  std::optional<Tensor> pan_1;
  std::optional<Tensor> lrms_1;
  std::optional<Tensor> pan_2;
  std::optional<Tensor> lrms_2;

  static TrainingInputs build(const ImagePair& pair, bool level1, bool level2,
                              std::size_t taps = kDefaultMtfTaps) {
    pair.validate();
    TrainingInputs in;
    in.pan = pair.pan.to_tensor();
    in.lrms = pair.lrms.to_tensor();
    in.band_kernel = ms_kernel(pair.sensor, taps);
    in.ratio = pair.sensor.ratio;
    if (level1 || level2) {
      const DegradedLevels levels = degrade_pair(pair, level2 ? 2 : 1, taps);
      in.pan_1 = levels.pan_1.to_tensor();
      in.lrms_1 = levels.lrms_1.to_tensor();
      if (level2) {
        in.pan_2 = levels.pan_2->to_tensor();
        in.lrms_2 = levels.lrms_2->to_tensor();
      }
    }
    return in;
  }
};

inline Tensor loss_level0(const InrConv& model, const TrainingInputs& in) {
  Tensor fused = model.forward(in.pan, in.lrms, 1.0);
  return l1_loss(decimate(mtf_blur(fused, in.band_kernel), in.ratio), in.lrms);
}

inline Tensor loss_level1(const InrConv& model, const TrainingInputs& in) {
  if (!in.pan_1) throw std::logic_error("loss_level1: level-1 inputs were not built");
  return l1_loss(model.forward(*in.pan_1, *in.lrms_1, 1.0), in.lrms);
}

inline Tensor loss_level2(const InrConv& model, const TrainingInputs& in) {
  if (!in.pan_2) throw std::logic_error("loss_level2: level-2 inputs were not built");
  Tensor same_scale = l1_loss(model.forward(*in.pan_2, *in.lrms_2, 1.0), *in.lrms_1);
  Tensor cross_scale = l1_loss(model.forward(*in.pan_2, *in.lrms_2, 4.0), in.lrms);
  return add(same_scale, cross_scale);
}

inline Tensor loss_level0(const InrConv& model, const ImagePair& pair) {
  return loss_level0(model, TrainingInputs::build(pair, false, false));
}
inline Tensor loss_level1(const InrConv& model, const ImagePair& pair) {
  return loss_level1(model, TrainingInputs::build(pair, true, false));
}
inline Tensor loss_level2(const InrConv& model, const ImagePair& pair) {
  return loss_level2(model, TrainingInputs::build(pair, true, true));
}

/// Weighted sum of the enabled terms; disabled or absent terms contribute 0.
inline Tensor total_loss(const std::optional<Tensor>& l0, const std::optional<Tensor>& l1,
                         const std::optional<Tensor>& l2, const TrainConfig& cfg) {
  std::optional<Tensor> total;
  auto accumulate = [&](const std::optional<Tensor>& term, bool enabled, float weight) {
    if (!enabled || !term) return;
    Tensor weighted = scale(*term, weight);
    total = total ? add(*total, weighted) : weighted;
  };
  accumulate(l0, cfg.enable_l0, cfg.alpha);
  accumulate(l1, cfg.enable_l1, cfg.beta);
  accumulate(l2, cfg.enable_l2, cfg.gamma);
  if (!total) return Tensor::zeros({1});
  return *total;
}

struct TrainResult {
  InrconvWeights weights;
  TrainLog log;
};

/// Called after every epoch; useful for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const ImagePair& pair, const TrainConfig& cfg, const InrconvHyper& hyper,
                         const std::optional<InrconvWeights>& initial = std::nullopt,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  pair.validate();
  if (hyper.bands != pair.sensor.bands || hyper.ratio != pair.sensor.ratio) {
    throw ShapeError("model is configured for " + std::to_string(hyper.bands) + " bands at r=" +
                     std::to_string(hyper.ratio) + ", pair has " + std::to_string(pair.sensor.bands) +
                     " at r=" + std::to_string(pair.sensor.ratio));
  }
  if (initial && !(initial->hyper == hyper)) {
    throw ShapeError("initial weights were built with different hyperparameters");
  }
  InrConv model(initial ? initial->clone() : InrconvWeights::initialize(hyper, cfg.seed));
  const TrainingInputs inputs = TrainingInputs::build(pair, cfg.enable_l1 || cfg.enable_l2,
                                                      cfg.enable_l2, cfg.mtf_taps);
  AdamState adam;
  adam.options.learning_rate = cfg.learning_rate;
  TrainLog log;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.weights().zero_grad();
    EpochRecord record;
    record.epoch = epoch + 1;
    try {
      std::optional<Tensor> l0, l1, l2;
      if (cfg.enable_l0) l0 = loss_level0(model, inputs);
      if (cfg.enable_l1) l1 = loss_level1(model, inputs);
      if (cfg.enable_l2) l2 = loss_level2(model, inputs);
      Tensor total = total_loss(l0, l1, l2, cfg);
      check_finite(total.data(), "total loss");
      record.total = total.item();
      record.l0 = l0 ? l0->item() : 0.0f;
      record.l1 = l1 ? l1->item() : 0.0f;
      record.l2 = l2 ? l2->item() : 0.0f;
      backward(total);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    adam.options.learning_rate = cfg.learning_rate_at(epoch);
    adam_step(model.weights().parameters(), adam);
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.records.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return {std::move(model.weights()), std::move(log)};
}

/// Weight reuse: a pure forward pass with weights trained on another pair.
inline MsImage infer_reuse(const InrconvWeights& weights, const ImagePair& pair, double scale) {
  pair.validate();
  if (weights.hyper.bands != pair.sensor.bands) {
    throw ShapeError("weights expect " + std::to_string(weights.hyper.bands) + " bands, pair has " +
                     std::to_string(pair.sensor.bands));
  }
  if (weights.hyper.ratio != pair.sensor.ratio) {
    throw ShapeError("weights expect ratio " + std::to_string(weights.hyper.ratio) + ", pair has " +
                     std::to_string(pair.sensor.ratio));
  }
  return InrConv(weights).infer(pair.pan, pair.lrms, scale);
}

}  // namespace inrpan

#pragma once

// Command-line front end: synth, train, infer, eval.
//
// Every option has a default; a `--config` file of `key = value` lines may
// set any option by its long flag name (without the leading dashes), and
// explicit flags override the file. Sensor overrides use `sensor.*` keys.
//
// Run directory layouts:
//   synth -> pan.arr lrms.arr gt.arr sensor.cfg
//   train -> weights.bin weights.manifest log.csv run.cfg
//   infer -> fused_x<N>.arr per requested scale
//   eval  -> metrics.csv [baseline_nearest.csv baseline_bicubic.csv] [hqnr_map.arr]

#include <CLI11.hpp>

#include <chrono>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "inrpan/metrics.hpp"
#include "inrpan/synth.hpp"
#include "inrpan/training.hpp"

namespace inrpan::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2, kNumeric = 3 };

/// Formats a scale the way output files are named: 1, 1.6, 3.4.
inline std::string scale_label(double scale) {
  std::ostringstream out;
  out << std::setprecision(6) << scale;
  return out.str();
}

inline std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> scales;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    std::istringstream in(detail::trim(item));
    double v = 0;
    in >> v;
    if (in.fail() || !in.eof() || !(v > 0)) throw std::invalid_argument("invalid scale `" + item + "`");
    scales.push_back(v);
  }
  if (scales.empty()) throw std::invalid_argument("no scales given");
  return scales;
}

namespace detail {

/// Option value resolution: flag, then config file, then default.
class Resolver {
 public:
  explicit Resolver(std::optional<KeyValueConfig> file) : file_(std::move(file)) {}

  template <typename T>
  T pick(const std::optional<T>& flag, const std::string& key, T fallback) {
    T value = fallback;
    if (flag) {
      value = *flag;
    } else if (file_ && file_->has(key)) {
      value = from_file<T>(key);
    }
    std::ostringstream text;
    text << std::setprecision(9) << std::boolalpha << value;
    resolved_.set(key, text.str());
    return value;
  }

  bool pick_flag(bool flag, const std::string& key) {
    const bool value = flag || (file_ && file_->get_bool(key, false));
    resolved_.set(key, value ? "true" : "false");
    return value;
  }

  const std::optional<KeyValueConfig>& file() const { return file_; }
  const KeyValueConfig& resolved() const { return resolved_; }

 private:
  template <typename T>
  T from_file(const std::string& key) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return file_->get_string(key);
    } else if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(file_->get_double(key));
    } else {
      return static_cast<T>(file_->get_int(key));
    }
  }

  std::optional<KeyValueConfig> file_;
  KeyValueConfig resolved_;
};

inline std::optional<KeyValueConfig> load_optional_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return KeyValueConfig::load(path);
}

inline ImagePair load_pair_with_overrides(const std::string& dir, const std::optional<KeyValueConfig>& cfg) {
  ImagePair pair = load_pair(dir);
  if (cfg) pair.sensor.apply_overrides(*cfg);
  pair.validate();
  return pair;
}

inline std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    item = inrpan::detail::trim(item);
    if (item.empty()) continue;
    if (item.find_first_not_of("0123456789") != std::string::npos || std::stoul(item) == 0)
      throw std::invalid_argument("invalid MLP width `" + item + "`");
    widths.push_back(std::stoul(item));
  }
  return widths;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::optional<long> seed, h, w, bands;
  std::optional<std::string> sensor;
  std::string out, config;
};

inline int cmd_synth(const SynthArgs& args, std::ostream& log) {
  detail::Resolver r(detail::load_optional_config(args.config));
  const auto seed = r.pick(args.seed, "seed", 0L);
  const auto h = r.pick(args.h, "h", 16L);
  const auto w = r.pick(args.w, "w", 16L);
  const auto bands = r.pick(args.bands, "bands", 0L);
  const auto name = r.pick(args.sensor, "sensor", std::string("synthetic"));
  if (h < 8 || w < 8 || bands < 0 || seed < 0) throw std::invalid_argument("synth: invalid size, band count or seed");
  SensorSpec sensor = sensor_by_name(name, static_cast<std::size_t>(bands));
  if (r.file()) sensor.apply_overrides(*r.file());
  const ImagePair pair = synth_pair(static_cast<std::uint64_t>(seed), static_cast<std::size_t>(h),
                                    static_cast<std::size_t>(w), sensor.bands, sensor);
  save_pair(args.out, pair);
  log << "wrote " << sensor.bands << "-band pair (PAN " << pair.pan.height << "x" << pair.pan.width
      << ", LRMS " << pair.lrms.height << "x" << pair.lrms.width << ") to " << args.out << '\n';
  return kOk;
}

struct TrainArgs {
  std::string pair_dir, config, init_weights, out;
  std::optional<long> epochs, seed, feature_dim, res_blocks, query_dim, mtf_taps;
  std::optional<double> lr, alpha, beta, gamma;
  std::optional<std::string> band_profile, lr_schedule, mlp_hidden;
  bool disable_l0 = false, disable_l1 = false, disable_l2 = false, quiet = false;
};

/// Resolved training and model settings for a pair.
struct TrainSetup {
  TrainConfig config;
  InrconvHyper hyper;
  KeyValueConfig resolved;
};

inline TrainSetup resolve_train(const TrainArgs& args, const ImagePair& pair,
                                const std::optional<KeyValueConfig>& file) {
  detail::Resolver r(file);
  const auto profile = r.pick(args.band_profile, "band-profile", TrainConfig::profile_for_bands(pair.sensor.bands));
  TrainSetup s;
  s.config = TrainConfig::for_profile(profile);
  s.config.epochs = static_cast<int>(r.pick(args.epochs, "epochs", 500L));
  s.config.learning_rate = static_cast<float>(r.pick(args.lr, "lr", 5e-4));
  s.config.alpha = static_cast<float>(r.pick(args.alpha, "alpha", double{s.config.alpha}));
  s.config.beta = static_cast<float>(r.pick(args.beta, "beta", double{s.config.beta}));
  s.config.gamma = static_cast<float>(r.pick(args.gamma, "gamma", double{s.config.gamma}));
  const auto seed = r.pick(args.seed, "seed", 0L);
  if (seed < 0) throw std::invalid_argument("seed must be non-negative");
  s.config.seed = static_cast<std::uint64_t>(seed);
  const auto schedule = r.pick(args.lr_schedule, "lr-schedule", std::string("constant"));
  if (schedule == "constant") s.config.schedule = LrSchedule::constant;
  else if (schedule == "cosine") s.config.schedule = LrSchedule::cosine;
  else throw std::invalid_argument("unknown lr-schedule `" + schedule + "` (constant, cosine)");
  s.config.enable_l0 = !r.pick_flag(args.disable_l0, "disable-l0");
  s.config.enable_l1 = !r.pick_flag(args.disable_l1, "disable-l1");
  s.config.enable_l2 = !r.pick_flag(args.disable_l2, "disable-l2");
  const auto taps = r.pick(args.mtf_taps, "mtf-taps", static_cast<long>(kDefaultMtfTaps));
  if (taps < 1 || taps % 2 == 0) throw std::invalid_argument("mtf-taps must be a positive odd number");
  s.config.mtf_taps = static_cast<std::size_t>(taps);

  s.hyper.bands = pair.sensor.bands;
  s.hyper.ratio = pair.sensor.ratio;
  s.hyper.feature_dim = static_cast<std::size_t>(r.pick(args.feature_dim, "feature-dim", 64L));
  s.hyper.res_blocks = static_cast<std::size_t>(r.pick(args.res_blocks, "res-blocks", 4L));
  s.hyper.query_dim = static_cast<std::size_t>(r.pick(args.query_dim, "query-dim", 64L));
  s.hyper.mlp_hidden = detail::parse_widths(r.pick(args.mlp_hidden, "mlp-hidden", std::string("256,256,256,256")));
  s.hyper.validate();
  s.config.validate();
  s.resolved = r.resolved();
  return s;
}

inline int cmd_train(const TrainArgs& args, std::ostream& log) {
  const auto file = detail::load_optional_config(args.config);
  const ImagePair pair = detail::load_pair_with_overrides(args.pair_dir, file);
  TrainSetup setup = resolve_train(args, pair, file);
  std::optional<InrconvWeights> initial;
  if (!args.init_weights.empty()) {
    initial = load_weights(args.init_weights);
    if (!(initial->hyper == setup.hyper)) {
      throw ShapeError("--init-weights " + args.init_weights + " do not match the configured model");
    }
  }
  std::filesystem::create_directories(args.out);
  const std::filesystem::path out(args.out);
  setup.resolved.save(out / "run.cfg");

  const auto report = [&](const EpochRecord& rec) {
    if (args.quiet) return;
    if (rec.epoch == 1 || rec.epoch % 50 == 0 || rec.epoch == setup.config.epochs) {
      log << "epoch " << rec.epoch << "/" << setup.config.epochs << "  total " << rec.total << "  l0 "
          << rec.l0 << "  l1 " << rec.l1 << "  l2 " << rec.l2 << "  (" << std::fixed << std::setprecision(1)
          << rec.seconds << std::defaultfloat << std::setprecision(6) << " s)\n";
    }
  };
  TrainResult result = train(pair, setup.config, setup.hyper, initial, report);
  save_weights(out / "weights.bin", result.weights);
  result.log.save_csv(out / "log.csv");
  log << "wrote " << (out / "weights.bin").string() << " and " << (out / "log.csv").string() << '\n';
  return kOk;
}

struct InferArgs {
  std::string weights, pair_dir, out, config;
  std::string scales = "1";
};

inline int cmd_infer(const InferArgs& args, std::ostream& log) {
  const auto file = detail::load_optional_config(args.config);
  const ImagePair pair = detail::load_pair_with_overrides(args.pair_dir, file);
  const InrconvWeights weights = load_weights(args.weights);
  const auto scales = parse_scales(args.scales);
  std::filesystem::create_directories(args.out);
  for (double scale : scales) {
    const MsImage fused = infer_reuse(weights, pair, scale);
    const auto path = std::filesystem::path(args.out) / ("fused_x" + scale_label(scale) + ".arr");
    save_array(path, fused.to_array());
    log << "x" << scale_label(scale) << " -> " << path.string() << " [" << fused.bands << "x" << fused.height
        << "x" << fused.width << "]\n";
  }
  return kOk;
}

struct EvalArgs {
  std::string fused, pair_dir, gt, out, config;
  long window = static_cast<long>(kQualityWindow);
  bool baselines = false;
  bool hqnr_map = false;
};

inline void print_report(std::ostream& log, const std::string& label, const MetricsReport& r) {
  auto cell = [&](const std::optional<double>& v) {
    if (v) log << std::setw(10) << std::setprecision(4) << std::fixed << *v;
    else log << std::setw(10) << "-";
  };
  log << std::left << std::setw(10) << label << std::right;
  cell(r.d_lambda);
  cell(r.d_s);
  cell(r.hqnr);
  cell(r.q2n);
  cell(r.sam_degrees);
  cell(r.ergas);
  cell(r.scc);
  log << std::defaultfloat << std::setprecision(6) << '\n';
}

inline void save_report(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << MetricsReport::kCsvHeader << '\n' << std::setprecision(9);
  r.write_csv_row(out);
}

inline int cmd_eval(const EvalArgs& args, std::ostream& log) {
  const auto file = detail::load_optional_config(args.config);
  const ImagePair pair = detail::load_pair_with_overrides(args.pair_dir, file);
  const MsImage fused = MsImage::from_tensor(load_array(args.fused));
  if (fused.bands != pair.lrms.bands || fused.height != pair.pan.height || fused.width != pair.pan.width) {
    throw ShapeError("fused image " + std::to_string(fused.bands) + "x" + std::to_string(fused.height) + "x" +
                     std::to_string(fused.width) + " is not on the PAN grid of the pair");
  }
  std::optional<MsImage> gt;
  if (!args.gt.empty()) gt = MsImage::from_tensor(load_array(args.gt));
  if (args.window < 1) throw std::invalid_argument("window must be positive");
  const auto window = static_cast<std::size_t>(args.window);

  const std::filesystem::path out(args.out);
  std::filesystem::create_directories(out);
  log << std::left << std::setw(10) << "" << std::right;
  for (const char* h : {"D_lambda", "D_s", "HQNR", "Q2n", "SAM", "ERGAS", "SCC"}) log << std::setw(10) << h;
  log << '\n';

  const MetricsReport report = evaluate(fused, pair, gt, window);
  save_report(out / "metrics.csv", report);
  print_report(log, "fused", report);
  if (args.baselines) {
    const double r = static_cast<double>(pair.sensor.ratio);
    for (auto [name, method] : {std::pair{"nearest", ResampleMethod::nearest},
                                std::pair{"bicubic", ResampleMethod::bicubic}}) {
      const MetricsReport b = evaluate(baseline_resample(pair.lrms, r, method), pair, gt, window);
      save_report(out / ("baseline_" + std::string(name) + ".csv"), b);
      print_report(log, name, b);
    }
  }
  if (args.hqnr_map) save_array(out / "hqnr_map.arr", hqnr_map(fused, pair));
  return kOk;
}

// ---------------------------------------------------------------------------

/// Parses `argv` and dispatches. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Zero-shot arbitrary-scale pansharpening with an INR fusion network"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a seeded synthetic pair with ground truth");
  s->set_help_flag("--help", "Print this help message and exit");
  s->add_option("--seed", synth.seed, "Random seed (default 0)");
  s->add_option("--h", synth.h, "LRMS height (default 16)");
  s->add_option("--w", synth.w, "LRMS width (default 16)");
  s->add_option("--bands", synth.bands, "Band count (default: the sensor's)");
  s->add_option("--sensor", synth.sensor, "wv3-like | gf2-like | synthetic (default synthetic)");
  s->add_option("--config", synth.config, "key = value config file");
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Zero-shot training on one pair");
  t->add_option("--pair-dir", train_args.pair_dir, "Pair directory")->required();
  t->add_option("--config", train_args.config, "key = value config file");
  t->add_option("--init-weights", train_args.init_weights, "Warm-start weights file");
  t->add_option("--out", train_args.out, "Output run directory")->required();
  t->add_option("--epochs", train_args.epochs, "Epochs (default 500)");
  t->add_option("--lr", train_args.lr, "Adam learning rate (default 5e-4)");
  t->add_option("--alpha", train_args.alpha, "Level-0 loss weight");
  t->add_option("--beta", train_args.beta, "Level-1 loss weight");
  t->add_option("--gamma", train_args.gamma, "Level-2 loss weight");
  t->add_option("--band-profile", train_args.band_profile, "8band | 4band (default from band count)");
  t->add_option("--seed", train_args.seed, "Initialization seed (default 0)");
  t->add_option("--lr-schedule", train_args.lr_schedule, "constant | cosine (default constant)");
  t->add_option("--feature-dim", train_args.feature_dim, "Encoder feature channels (default 64)");
  t->add_option("--res-blocks", train_args.res_blocks, "Encoder residual blocks (default 4)");
  t->add_option("--mlp-hidden", train_args.mlp_hidden, "Hidden MLP widths (default 256,256,256,256)");
  t->add_option("--query-dim", train_args.query_dim, "Queried feature channels (default 64)");
  t->add_option("--mtf-taps", train_args.mtf_taps, "MTF kernel size (default 41)");
  t->add_flag("--disable-l0", train_args.disable_l0, "Drop the level-0 loss");
  t->add_flag("--disable-l1", train_args.disable_l1, "Drop the level-1 loss");
  t->add_flag("--disable-l2", train_args.disable_l2, "Drop the level-2 loss");
  t->add_flag("--quiet", train_args.quiet, "No per-epoch progress");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Fuse a pair at one or more scales");
  i->add_option("--weights", infer.weights, "weights.bin (manifest alongside)")->required();
  i->add_option("--pair-dir", infer.pair_dir, "Pair directory")->required();
  i->add_option("--scale", infer.scales, "Comma-separated scales (default 1)");
  i->add_option("--config", infer.config, "key = value config file");
  i->add_option("--out", infer.out, "Output directory")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Quality metrics of a fused image");
  e->add_option("--fused", eval.fused, "Fused array on the PAN grid")->required();
  e->add_option("--pair-dir", eval.pair_dir, "Pair directory")->required();
  e->add_option("--gt", eval.gt, "Ground-truth array for reference metrics");
  e->add_option("--window", eval.window, "Quality-index window (default 32)");
  e->add_option("--config", eval.config, "key = value config file");
  e->add_option("--out", eval.out, "Output directory")->required();
  e->add_flag("--baselines", eval.baselines, "Also score nearest and bicubic upsampling");
  e->add_flag("--hqnr-map", eval.hqnr_map, "Write a per-block HQNR raster");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, log, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_synth(synth, log);
    if (*t) return cmd_train(train_args, log);
    if (*i) return cmd_infer(infer, log);
    if (*e) return cmd_eval(eval, log);
  } catch (const NumericError& ex) {
    err << "numerical failure: " << ex.what() << '\n';
    return kNumeric;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"inrpan"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), log, err);
}

}  // namespace inrpan::cli

#pragma once

// Experiment drivers behind the command-line subcommands. Every driver writes
// its files into RunConfig::out and returns the parsed document for callers
// that want to inspect it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbarsim/benchmarks.hpp"
#include "xbarsim/datasets.hpp"
#include "xbarsim/engine.hpp"
#include "xbarsim/estimator.hpp"
#include "xbarsim/hwmodel.hpp"
#include "xbarsim/parallel.hpp"
#include "xbarsim/rng.hpp"

namespace xbarsim {

struct RunConfig {
  std::filesystem::path model;
  std::string dataset;        // "mnist:IMAGES,LABELS" or "cifar10:BATCH[,BATCH...]"
  std::string calib_dataset;  // defaults to `dataset`
  int bits = 0;               // 0 keeps the model's own widths
  std::string mode = "exact";  // exact | relu | approx | combined | oracle
  BoundsMode bounds = BoundsMode::WorstCase;
  double threshold = 0.8;
  std::vector<double> thresholds{0.0, 0.2, 0.5, 0.8, 1.1};
  std::vector<BoundsMode> sweep_bounds{BoundsMode::WorstCase, BoundsMode::Statistical, BoundsMode::Oracle};
  std::size_t calib_n = 500;
  std::size_t images_n = 500;  // 0 = whole dataset
  std::filesystem::path hw_config;
  std::filesystem::path lut;  // defaults to <out>/lut_<bounds>.json
  std::filesystem::path out = "out";
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  bool approx_fc = false;
  // report subcommand
  std::string benchmark = "all";
  double reduction = -1;  // < 0 uses the reference figure of each benchmark

  void validate() const {
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw Error("threshold must be finite and >= 0");
    for (double t : thresholds)
      if (!(t >= 0.0) || !std::isfinite(t)) throw Error("thresholds must be finite and >= 0");
    if (bits != 0 && bits != 8 && bits != 16 && (bits < 2 || bits > kMaxBits))
      throw Error("bit width must lie in [2, 16]");
    policy();
  }

  TerminationPolicy policy() const { return policy_for(mode, bounds, threshold); }

  TerminationPolicy policy_for(const std::string& m, BoundsMode b, double t) const {
    TerminationPolicy p;
    p.threshold = t;
    p.bounds = b;
    p.apply_to_fc = approx_fc;
    if (m == "exact") {
    } else if (m == "relu") {
      p.relu_bypass = true;
    } else if (m == "approx") {
      p.approx_enabled = true;
    } else if (m == "combined") {
      p.relu_bypass = p.approx_enabled = true;
    } else if (m == "oracle") {
      p.approx_enabled = true;
      p.bounds = BoundsMode::Oracle;
    } else {
      throw Error("unknown mode '" + m + "' (expected exact, relu, approx, combined or oracle)");
    }
    return p;
  }
};

inline std::filesystem::path lut_file_name(BoundsMode b) { return "lut_" + to_string(b) + ".json"; }

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, sep);)
    if (!p.empty()) parts.push_back(p);
  return parts;
}

inline void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p)) throw Error(what + " not found: " + p.string());
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

/// Loads a dataset given as "mnist:IMAGES,LABELS" or "cifar10:BATCH[,BATCH...]".
inline RawDataset load_dataset(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw Error("dataset must be 'mnist:IMAGES,LABELS' or 'cifar10:BATCH[,...]'");
  const auto kind = spec.substr(0, colon);
  const auto files = detail::split(spec.substr(colon + 1), ',');
  for (const auto& f : files) detail::require_file(f, "dataset file");
  if (kind == "mnist") {
    if (files.size() != 2) throw Error("mnist dataset needs an image file and a label file");
    return load_mnist_raw(files[0], files[1]);
  }
  if (kind == "cifar10") {
    if (files.empty()) throw Error("cifar10 dataset needs at least one batch file");
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    return load_cifar10_raw(paths);
  }
  throw Error("unknown dataset kind '" + kind + "'");
}

inline NetworkModel load_run_model(const RunConfig& cfg) {
  if (cfg.model.empty()) throw Error("no model given");
  detail::require_file(cfg.model, "model directory");
  auto m = load_model(cfg.model);
  if (cfg.bits != 0 && cfg.bits != m.input_spec().bit_width) m = requantize_model(m, cfg.bits);
  return m;
}

inline HwConfig load_hw_config(const RunConfig& cfg) {
  if (cfg.hw_config.empty()) return {};
  detail::require_file(cfg.hw_config, "hardware config");
  return hw_config_from_json(read_json_file(cfg.hw_config));
}

inline nlohmann::ordered_json config_json(const RunConfig& cfg) {
  nlohmann::ordered_json th = nlohmann::ordered_json::array();
  for (double t : cfg.thresholds) th.push_back(t);
  return {{"model", cfg.model.string()},   {"dataset", cfg.dataset},
          {"calib_dataset", cfg.calib_dataset}, {"bits", cfg.bits},
          {"mode", cfg.mode},              {"bounds", to_string(cfg.bounds)},
          {"threshold", cfg.threshold},    {"thresholds", th},
          {"calib_n", cfg.calib_n},        {"images_n", cfg.images_n},
          {"hw_config", cfg.hw_config.string()}, {"seed", cfg.seed},
          {"approx_fc", cfg.approx_fc}};
}

// ---------------------------------------------------------------------------
// stats

struct StatsOutput {
  BitProbability probabilities;
  EstimateLUT worst;
  EstimateLUT statistical;
};

/// Calibrates bit probabilities on a seeded sample and writes
/// probabilities.json, lut_worst.json and lut_stat.json.
inline StatsOutput cmd_stats(const RunConfig& cfg) {
  if (cfg.calib_n == 0) throw Error("calibration size must be at least 1");
  const auto m = load_run_model(cfg);
  const auto& spec = cfg.calib_dataset.empty() ? cfg.dataset : cfg.calib_dataset;
  if (spec.empty()) throw Error("no calibration dataset given");
  const auto raw = load_dataset(spec);
  const auto pick = sample_indices(raw.size(), cfg.calib_n, cfg.seed);
  RawDataset sub;
  sub.shape = raw.shape;
  for (auto k : pick) {
    sub.pixels.push_back(raw.pixels[k]);
    sub.labels.push_back(raw.labels[k]);
  }
  const auto images = prepare(sub, m);

  StatsOutput out;
  out.probabilities = extract_probabilities(m, images, cfg.threads);
  out.worst = build_lut(m, nullptr, BoundsMode::WorstCase);
  out.statistical = build_lut(m, &out.probabilities, BoundsMode::Statistical);
  std::filesystem::create_directories(cfg.out);
  write_json_file(cfg.out / "probabilities.json", to_json(out.probabilities));
  write_json_file(cfg.out / lut_file_name(BoundsMode::WorstCase), to_json(out.worst));
  write_json_file(cfg.out / lut_file_name(BoundsMode::Statistical), to_json(out.statistical));
  return out;
}

// ---------------------------------------------------------------------------
// run / sweep

/// Outcome of running a policy over a fixed image list, paired with the exact
/// result of every image.
struct EvalOutput {
  std::size_t images = 0;
  double accuracy_exact = 0;
  double accuracy_reduced = 0;
  std::vector<LayerRunStats> stats;
  ReductionReport reduction;
  std::vector<double> per_image_reduction;  // CONV layers
  std::vector<std::vector<LayerOccupancy>> occupancy;
};

inline std::vector<LabeledImage> load_run_images(const RunConfig& cfg, const NetworkModel& m) {
  if (cfg.dataset.empty()) throw Error("no dataset given");
  auto images = prepare(load_dataset(cfg.dataset), m, cfg.images_n);
  if (images.empty()) throw Error("dataset holds no images");
  return images;
}

inline const EstimateLUT* resolve_lut(const RunConfig& cfg, const TerminationPolicy& policy, EstimateLUT& storage) {
  if (!policy.armed() || policy.bounds == BoundsMode::Oracle) return nullptr;
  const auto path = cfg.lut.empty() ? cfg.out / lut_file_name(policy.bounds) : cfg.lut;
  if (!std::filesystem::exists(path))
    throw Error("missing LUT for " + to_string(policy.bounds) + " bounds: " + path.string() + " (run 'stats' first)");
  storage = lut_from_json(read_json_file(path));
  return &storage;
}

/// Runs `policy` on every image, in parallel, and folds the results in image
/// order so the outcome does not depend on the thread count.
inline EvalOutput evaluate(const NetworkModel& m, std::span<const LabeledImage> images, const TerminationPolicy& policy,
                           const EstimateLUT* lut, unsigned threads, bool keep_occupancy) {
  check_lut_for_policy(m, policy, lut);
  struct PerImage {
    bool exact_ok = false, reduced_ok = false;
    ReducedResult reduced;
  };
  std::vector<PerImage> per(images.size());
  parallel_for(images.size(), threads, [&](std::size_t k) {
    const auto exact = infer_exact(m, images[k].pixels, false);
    auto& p = per[k];
    p.exact_ok = static_cast<int>(argmax(exact.logits)) == images[k].label;
    p.reduced = infer_reduced(m, images[k].pixels, policy, lut);
    p.reduced_ok = static_cast<int>(argmax(p.reduced.logits)) == images[k].label;
    if (!keep_occupancy) p.reduced.occupancy.clear();
  });
  EvalOutput out;
  out.images = images.size();
  std::size_t exact_ok = 0, reduced_ok = 0;
  for (auto& p : per) {
    exact_ok += p.exact_ok;
    reduced_ok += p.reduced_ok;
    accumulate_stats(out.stats, p.reduced.stats);
    out.per_image_reduction.push_back(reduction_report(p.reduced.stats).reduction_overall);
    if (keep_occupancy) out.occupancy.push_back(std::move(p.reduced.occupancy));
  }
  const double n = static_cast<double>(images.size());
  out.accuracy_exact = static_cast<double>(exact_ok) / n;
  out.accuracy_reduced = static_cast<double>(reduced_ok) / n;
  out.reduction = reduction_report(out.stats);
  return out;
}

inline Comparison compare_hw(const NetworkModel& m, const std::vector<std::vector<LayerOccupancy>>& reduced,
                             const HwConfig& hw, bool estimation_hw) {
  const auto plan = map_network(m, hw);
  HwAccumulator base(plan, hw, m.dataset, false);
  HwAccumulator red(plan, hw, m.dataset, estimation_hw);
  const auto full = full_occupancy(m);
  for (const auto& occ : reduced) {
    base.add(full);
    red.add(occ);
  }
  return {base.report(), red.report()};
}

inline nlohmann::ordered_json to_json(const LayerRunStats& s, const NetworkModel& m) {
  return {{"layer", s.layer},
          {"name", m.layers[s.layer].name},
          {"kind", to_string(m.layers[s.layer].kind)},
          {"macs", s.mac_count},
          {"iterations_executed", s.iterations_executed},
          {"iterations_total", s.iterations_total},
          {"negative_outputs", s.negative_output_count},
          {"negative_detected", s.negative_detected_count},
          {"false_bypass", s.false_bypass_count},
          {"relu_bypass", s.relu_bypass_count},
          {"approx", s.approx_count},
          {"checks", s.checks},
          {"bound_violations", s.bound_violations}};
}

inline nlohmann::ordered_json to_json(const ReductionReport& r) {
  return {{"reduction_overall", r.reduction_overall},
          {"reduction_negative_outputs", r.reduction_negative_outputs},
          {"detection_rate", r.detection_rate},
          {"negative_share", r.negative_share},
          {"false_bypass_rate", r.false_bypass_rate},
          {"reduction_fc", r.reduction_fc},
          {"conv_macs", r.conv_macs},
          {"negative_outputs", r.negative_outputs},
          {"bound_violations", r.bound_violations}};
}

inline std::string summary_header() {
  return "model,dataset,bits,mode,bounds,threshold,images,accuracy_exact,accuracy_reduced,accuracy_drop,"
         "reduction_overall,reduction_negative_outputs,detection_rate,negative_share,energy_efficiency_ratio,"
         "throughput_ratio,area_efficiency_ratio,overhead_share\n";
}

/// Exact and reduced inference over the dataset plus the hardware comparison;
/// writes results.json and summary.csv.
inline nlohmann::ordered_json cmd_run(const RunConfig& cfg) {
  cfg.validate();
  const auto m = load_run_model(cfg);
  const auto hw = load_hw_config(cfg);
  const auto policy = cfg.policy();
  EstimateLUT lut_storage;
  const auto* lut = resolve_lut(cfg, policy, lut_storage);
  const auto images = load_run_images(cfg, m);
  const auto ev = evaluate(m, images, policy, lut, cfg.threads, true);
  const auto cmp = compare_hw(m, ev.occupancy, hw, policy.armed());

  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& s : ev.stats) layers.push_back(to_json(s, m));
  nlohmann::ordered_json doc;
  doc["config"] = config_json(cfg);
  doc["model"] = {{"name", m.name}, {"dataset", m.dataset}, {"bits", m.input_spec().bit_width}};
  doc["images"] = ev.images;
  doc["accuracy"] = {{"exact", ev.accuracy_exact},
                     {"reduced", ev.accuracy_reduced},
                     {"drop", ev.accuracy_exact - ev.accuracy_reduced}};
  doc["reduction"] = to_json(ev.reduction);
  doc["layers"] = layers;
  doc["hardware"] = to_json(cmp);
  doc["hardware"]["reduced"]["overhead_share"] = cmp.reduced.overhead_share();
  doc["hw_config"] = to_json(hw);

  std::filesystem::create_directories(cfg.out);
  write_json_file(cfg.out / "results.json", doc);
  const int bits = m.input_spec().bit_width;
  std::string row = summary_header();
  row += m.name + "," + m.dataset + "," + std::to_string(bits) + "," + cfg.mode + "," + to_string(policy.bounds) + "," +
         detail::fmt(cfg.threshold) + "," + std::to_string(ev.images) + "," + detail::fmt(ev.accuracy_exact) + "," +
         detail::fmt(ev.accuracy_reduced) + "," + detail::fmt(ev.accuracy_exact - ev.accuracy_reduced) + "," +
         detail::fmt(ev.reduction.reduction_overall) + "," + detail::fmt(ev.reduction.reduction_negative_outputs) +
         "," + detail::fmt(ev.reduction.detection_rate) + "," + detail::fmt(ev.reduction.negative_share) + "," +
         detail::fmt(cmp.energy_efficiency_ratio()) + "," + detail::fmt(cmp.throughput_ratio()) + "," +
         detail::fmt(cmp.area_efficiency_ratio()) + "," + detail::fmt(cmp.reduced.overhead_share()) + "\n";
  detail::write_text(cfg.out / "summary.csv", row);
  return doc;
}

struct SweepRow {
  BoundsMode bounds = BoundsMode::WorstCase;
  double threshold = 0;
  double reduction = 0;
  double reduction_negative_outputs = 0;
  double detection_rate = 0;
  double accuracy_exact = 0;
  double accuracy = 0;
  std::uint64_t monotonicity_violations = 0;  // images whose reduction fell versus the previous threshold
};

/// Threshold sweep per bounds mode; writes sweep.csv. Thresholds are swept in
/// ascending order. Bounds modes without a LUT file are skipped unless the
/// sweep was asked for exactly that mode.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.thresholds.empty()) throw Error("sweep needs at least one threshold");
  const auto m = load_run_model(cfg);
  const auto images = load_run_images(cfg, m);
  auto ts = cfg.thresholds;
  std::sort(ts.begin(), ts.end());
  const std::string mode = cfg.mode == "exact" ? "approx" : cfg.mode;

  std::vector<SweepRow> rows;
  for (const auto b : cfg.sweep_bounds) {
    auto base_policy = cfg.policy_for(mode == "oracle" ? "approx" : mode, b, 0.0);
    EstimateLUT storage;
    const EstimateLUT* lut = nullptr;
    if (b != BoundsMode::Oracle) {
      const auto path = cfg.lut.empty() ? cfg.out / lut_file_name(b) : cfg.lut;
      if (!std::filesystem::exists(path)) {
        if (cfg.sweep_bounds.size() == 1) throw Error("missing LUT for " + to_string(b) + " bounds: " + path.string());
        continue;
      }
      storage = lut_from_json(read_json_file(path));
      if (storage.mode != b) continue;
      lut = &storage;
    }
    std::vector<double> prev;
    for (double t : ts) {
      auto policy = base_policy;
      policy.threshold = t;
      const auto ev = evaluate(m, images, policy, lut, cfg.threads, false);
      SweepRow r;
      r.bounds = b;
      r.threshold = t;
      r.reduction = ev.reduction.reduction_overall;
      r.reduction_negative_outputs = ev.reduction.reduction_negative_outputs;
      r.detection_rate = ev.reduction.detection_rate;
      r.accuracy_exact = ev.accuracy_exact;
      r.accuracy = ev.accuracy_reduced;
      if (!prev.empty())
        for (std::size_t k = 0; k < prev.size(); ++k)
          if (ev.per_image_reduction[k] < prev[k]) ++r.monotonicity_violations;
      prev = ev.per_image_reduction;
      rows.push_back(r);
    }
  }

  std::string csv =
      "bounds,threshold,reduction_overall,reduction_negative_outputs,detection_rate,accuracy_exact,accuracy,"
      "accuracy_drop,monotonicity_violations\n";
  for (const auto& r : rows)
    csv += to_string(r.bounds) + "," + detail::fmt(r.threshold) + "," + detail::fmt(r.reduction) + "," +
           detail::fmt(r.reduction_negative_outputs) + "," + detail::fmt(r.detection_rate) + "," +
           detail::fmt(r.accuracy_exact) + "," + detail::fmt(r.accuracy) + "," +
           detail::fmt(r.accuracy_exact - r.accuracy) + "," + std::to_string(r.monotonicity_violations) + "\n";
  std::filesystem::create_directories(cfg.out);
  detail::write_text(cfg.out / "sweep.csv", csv);
  return rows;
}

// ---------------------------------------------------------------------------
// report

struct ReferencePoint {
  std::string benchmark;
  int bits;
  double reduction;
  double energy_ratio;
  double throughput_ratio;
};

/// Reductions and the ratios reported for them in the reference evaluation.
inline const std::vector<ReferencePoint>& reference_points() {
  static const std::vector<ReferencePoint> points{{"cifarquick", 16, 0.694, 2.9, 2.8},
                                                  {"lenet5", 16, 0.785, 3.0, 4.5},
                                                  {"cifarquick", 8, 0.391, 1.4, 1.6},
                                                  {"lenet5", 8, 0.454, 1.6, 1.9}};
  return points;
}

struct ReportRow {
  std::string benchmark;
  int bits = 0;
  double reduction = 0;
  Comparison comparison;
  double reference_energy_ratio = 0;  // 0 when not a reference point
  double reference_throughput_ratio = 0;
};

inline ReportRow model_report(const std::string& benchmark, int bits, double reduction, const HwConfig& hw) {
  const auto m = benchmark_model(benchmark, bits);
  ReportRow r{benchmark, bits, reduction, compare_hw(m, {inject_reduction(m, reduction)}, hw, true)};
  for (const auto& p : reference_points())
    if (p.benchmark == benchmark && p.bits == bits && std::abs(p.reduction - reduction) < 1e-12) {
      r.reference_energy_ratio = p.energy_ratio;
      r.reference_throughput_ratio = p.throughput_ratio;
    }
  return r;
}

/// Model-level efficiency ratios for given CONV computation reductions on the
/// benchmark topologies; writes report.json and report.csv.
inline std::vector<ReportRow> cmd_report(const RunConfig& cfg) {
  const auto hw = load_hw_config(cfg);
  std::vector<ReportRow> rows;
  for (const auto& p : reference_points()) {
    if (cfg.benchmark != "all" && cfg.benchmark != p.benchmark) continue;
    if (cfg.bits != 0 && cfg.bits != p.bits) continue;
    rows.push_back(model_report(p.benchmark, p.bits, cfg.reduction >= 0 ? cfg.reduction : p.reduction, hw));
  }
  if (rows.empty()) {
    if (cfg.bits == 0) throw Error("no benchmark matches '" + cfg.benchmark + "'");
    rows.push_back(model_report(cfg.benchmark, cfg.bits, std::max(cfg.reduction, 0.0), hw));
  }

  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  std::string csv =
      "benchmark,bits,reduction,energy_efficiency_ratio,throughput_ratio,area_efficiency_ratio,area_overhead,"
      "overhead_share,reference_energy_ratio,reference_throughput_ratio\n";
  for (const auto& r : rows) {
    auto j = to_json(r.comparison);
    j["benchmark"] = r.benchmark;
    j["bits"] = r.bits;
    j["reduction"] = r.reduction;
    j["reference"] = {{"energy_efficiency", r.reference_energy_ratio}, {"throughput", r.reference_throughput_ratio}};
    doc.push_back(j);
    const auto& c = r.comparison;
    csv += r.benchmark + "," + std::to_string(r.bits) + "," + detail::fmt(r.reduction) + "," +
           detail::fmt(c.energy_efficiency_ratio()) + "," + detail::fmt(c.throughput_ratio()) + "," +
           detail::fmt(c.area_efficiency_ratio()) + "," + detail::fmt(c.area_overhead()) + "," +
           detail::fmt(c.reduced.overhead_share()) + "," + detail::fmt(r.reference_energy_ratio) + "," +
           detail::fmt(r.reference_throughput_ratio) + "\n";
  }
  std::filesystem::create_directories(cfg.out);
  write_json_file(cfg.out / "report.json", doc);
  detail::write_text(cfg.out / "report.csv", csv);
  return rows;
}

}  // namespace xbarsim

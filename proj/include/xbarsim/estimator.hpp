#pragma once

// Offline bound construction: per-bit +1/-1 probabilities from calibration
// activations, per-iteration partial-result bounds (worst case or
// statistical) and the cumulative per-channel Max/Min look-up table.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbarsim/datasets.hpp"
#include "xbarsim/netgraph.hpp"
#include "xbarsim/parallel.hpp"
#include "xbarsim/qcore.hpp"

namespace xbarsim {

enum class BoundsMode { WorstCase, Statistical, Oracle };

inline std::string to_string(BoundsMode m) {
  switch (m) {
    case BoundsMode::WorstCase: return "worst";
    case BoundsMode::Statistical: return "stat";
    case BoundsMode::Oracle: return "oracle";
  }
  return "?";
}

inline BoundsMode parse_bounds_mode(const std::string& s) {
  if (s == "worst") return BoundsMode::WorstCase;
  if (s == "stat") return BoundsMode::Statistical;
  if (s == "oracle") return BoundsMode::Oracle;
  throw Error("unknown bounds mode '" + s + "'");
}

struct ProbSpan {
  double avg = 0, min = 0, max = 0;
};

struct LayerBitProbability {
  std::size_t layer = 0;
  std::string name;
  int bit_width = 0;
  bool nonnegative_inputs = false;
  std::vector<ProbSpan> p_plus;   // indexed by bit position, 0 = LSB
  std::vector<ProbSpan> p_minus;
};

struct BitProbability {
  std::size_t calibration_images = 0;
  std::vector<LayerBitProbability> layers;

  const LayerBitProbability* find(std::size_t layer) const {
    for (const auto& l : layers)
      if (l.layer == layer) return &l;
    return nullptr;
  }
};

struct KernelSums {
  std::int64_t sum_pos = 0;
  std::int64_t sum_neg = 0;  // <= 0
  std::int64_t sum_abs() const { return sum_pos - sum_neg; }
};

inline KernelSums kernel_sums(std::span<const std::int32_t> weights) {
  KernelSums s;
  for (auto w : weights) (w > 0 ? s.sum_pos : s.sum_neg) += w;
  return s;
}

struct IterationBound {
  std::int64_t max = 0;
  std::int64_t min = 0;
  friend bool operator==(const IterationBound&, const IterationBound&) = default;
};

// Rounds away from zero; values within 1e-9 (relative) of an integer snap to it
// so that exact products are not pushed up by floating-point noise.
inline std::int64_t round_away_from_zero(double x) {
  const double a = std::fabs(x);
  const double nearest = std::nearbyint(a);
  const double r = std::fabs(a - nearest) <= 1e-9 * std::max(1.0, a) ? nearest : std::ceil(a);
  return static_cast<std::int64_t>(x < 0 ? -r : r);
}

inline IterationBound worst_case_bounds(const KernelSums& s, int position, bool nonnegative_inputs) {
  const std::int64_t scale = std::int64_t{1} << position;
  if (nonnegative_inputs) return {s.sum_pos * scale, s.sum_neg * scale};
  return {s.sum_abs() * scale, -s.sum_abs() * scale};
}

inline IterationBound statistical_bounds(const KernelSums& s, const ProbSpan& plus, const ProbSpan& minus,
                                         int position) {
  const double wp = static_cast<double>(s.sum_pos);
  const double wn = static_cast<double>(s.sum_neg);
  const double max_pos = wp * plus.max + (-wn) * minus.max;
  const double max_neg = -wp * minus.min + wn * plus.min;
  const double min_pos = wp * plus.min + (-wn) * minus.min;
  const double min_neg = -wp * minus.max + wn * plus.max;
  const double scale = std::ldexp(1.0, position);
  return {round_away_from_zero((max_pos + max_neg) * scale), round_away_from_zero((min_pos + min_neg) * scale)};
}

/// Bounds on one bit position's partial result. `probs` is only read in
/// statistical mode.
inline IterationBound per_iteration_bounds(const KernelSums& s, const LayerBitProbability* probs, int position,
                                           BoundsMode mode, bool nonnegative_inputs) {
  switch (mode) {
    case BoundsMode::WorstCase: return worst_case_bounds(s, position, nonnegative_inputs);
    case BoundsMode::Statistical:
      if (!probs) throw Error("statistical bounds need bit probabilities");
      if (position < 0 || position >= static_cast<int>(probs->p_plus.size()))
        throw Error("bit position outside probability table");
      return statistical_bounds(s, probs->p_plus[static_cast<std::size_t>(position)],
                                probs->p_minus[static_cast<std::size_t>(position)], position);
    case BoundsMode::Oracle: break;
  }
  throw Error("oracle bounds have no offline estimate");
}

// ---------------------------------------------------------------------------
// Probability extraction

namespace detail {

struct DigitCounts {
  std::vector<std::uint64_t> plus, minus;
  std::uint64_t total = 0;
};

inline DigitCounts count_digits(std::span<const std::int32_t> values, int bits) {
  DigitCounts c{std::vector<std::uint64_t>(static_cast<std::size_t>(bits)),
                std::vector<std::uint64_t>(static_cast<std::size_t>(bits)), values.size()};
  for (auto v : values) {
    std::uint32_t mag = static_cast<std::uint32_t>(v < 0 ? -v : v);
    auto& dst = v < 0 ? c.minus : c.plus;
    while (mag != 0) {
      const int i = std::countr_zero(mag);
      ++dst[static_cast<std::size_t>(i)];
      mag &= mag - 1;
    }
  }
  return c;
}

}  // namespace detail

inline BitProbability extract_probabilities(const NetworkModel& m, std::span<const LabeledImage> images,
                                            unsigned threads = default_threads()) {
  if (images.size() < 2) throw Error("calibration needs at least 2 images");
  std::vector<std::size_t> compute;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].is_compute()) compute.push_back(i);

  // per image, per compute layer
  std::vector<std::vector<detail::DigitCounts>> counts(images.size());
  parallel_for(images.size(), threads, [&](std::size_t k) {
    const auto res = infer_exact(m, images[k].pixels);
    auto& out = counts[k];
    for (auto li : compute) {
      const auto& input = li == 0 ? images[k].pixels.data : res.activations[li - 1].data;
      out.push_back(detail::count_digits(input, m.layers[li].input_spec.bit_width));
    }
  });

  BitProbability probs;
  probs.calibration_images = images.size();
  for (std::size_t c = 0; c < compute.size(); ++c) {
    const auto li = compute[c];
    const int bits = m.layers[li].input_spec.bit_width;
    LayerBitProbability lp{li, m.layers[li].name, bits, inputs_nonnegative(m, li),
                           std::vector<ProbSpan>(static_cast<std::size_t>(bits)),
                           std::vector<ProbSpan>(static_cast<std::size_t>(bits))};
    for (int i = 0; i < bits; ++i) {
      const auto b = static_cast<std::size_t>(i);
      auto& pp = lp.p_plus[b];
      auto& pm = lp.p_minus[b];
      pp.min = pm.min = 1.0;
      pp.max = pm.max = 0.0;
      double sum_p = 0, sum_m = 0;
      for (std::size_t k = 0; k < images.size(); ++k) {
        const auto& dc = counts[k][c];
        const double n = static_cast<double>(std::max<std::uint64_t>(dc.total, 1));
        const double p = static_cast<double>(dc.plus[b]) / n;
        const double q = static_cast<double>(dc.minus[b]) / n;
        sum_p += p;
        sum_m += q;
        pp.min = std::min(pp.min, p);
        pp.max = std::max(pp.max, p);
        pm.min = std::min(pm.min, q);
        pm.max = std::max(pm.max, q);
      }
      pp.avg = sum_p / static_cast<double>(images.size());
      pm.avg = sum_m / static_cast<double>(images.size());
    }
    probs.layers.push_back(std::move(lp));
  }
  return probs;
}

/// Probability table with every span widened to [0, 1] (and -1 digits pinned
/// to zero on layers with non-negative inputs).
inline BitProbability full_span_probabilities(const NetworkModel& m) {
  BitProbability probs;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    const bool nonneg = inputs_nonnegative(m, li);
    const auto n = static_cast<std::size_t>(l.input_spec.bit_width);
    probs.layers.push_back({li, l.name, l.input_spec.bit_width, nonneg,
                            std::vector<ProbSpan>(n, ProbSpan{0.5, 0.0, 1.0}),
                            std::vector<ProbSpan>(n, nonneg ? ProbSpan{} : ProbSpan{0.5, 0.0, 1.0})});
  }
  return probs;
}

// ---------------------------------------------------------------------------
// Look-up table

struct ChannelLUT {
  std::vector<std::int64_t> max;  // index t-1 for iterations t = 1 .. N-1
  std::vector<std::int64_t> min;
  friend bool operator==(const ChannelLUT&, const ChannelLUT&) = default;
};

struct LayerLUT {
  std::size_t layer = 0;
  std::string name;
  int iterations = 0;  // N
  std::vector<ChannelLUT> channels;
  friend bool operator==(const LayerLUT&, const LayerLUT&) = default;
};

struct EstimateLUT {
  BoundsMode mode = BoundsMode::WorstCase;
  std::vector<LayerLUT> layers;

  const LayerLUT* find(std::size_t layer) const {
    for (const auto& l : layers)
      if (l.layer == layer) return &l;
    return nullptr;
  }
};

/// Cumulative bounds for one kernel: after iteration t the remaining bit
/// positions are 0 .. N-t-1, and entry t sums their per-iteration bounds.
inline ChannelLUT build_channel_lut(std::span<const std::int32_t> kernel, int bits, BoundsMode mode,
                                    bool nonnegative_inputs, const LayerBitProbability* probs) {
  const auto sums = kernel_sums(kernel);
  ChannelLUT row;
  row.max.assign(static_cast<std::size_t>(bits - 1), 0);
  row.min.assign(static_cast<std::size_t>(bits - 1), 0);
  std::int64_t run_max = 0, run_min = 0;
  // t = N-1 leaves position 0; walk t downwards adding one position each step.
  for (int t = bits - 1; t >= 1; --t) {
    const auto b = per_iteration_bounds(sums, probs, bits - 1 - t, mode, nonnegative_inputs);
    run_max += b.max;
    run_min += b.min;
    row.max[static_cast<std::size_t>(t - 1)] = run_max;
    row.min[static_cast<std::size_t>(t - 1)] = run_min;
  }
  return row;
}

inline EstimateLUT build_lut(const NetworkModel& m, const BitProbability* probs, BoundsMode mode) {
  if (mode == BoundsMode::Oracle) throw Error("oracle mode has no look-up table");
  EstimateLUT lut{mode, {}};
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    const LayerBitProbability* lp = nullptr;
    if (mode == BoundsMode::Statistical) {
      lp = probs ? probs->find(li) : nullptr;
      if (!lp) throw Error("no bit probabilities for layer " + l.name);
      if (lp->bit_width != l.input_spec.bit_width) throw Error("probability bit width mismatch for " + l.name);
    }
    LayerLUT row{li, l.name, l.input_spec.bit_width, {}};
    const bool nonneg = inputs_nonnegative(m, li);
    for (int z = 0; z < l.out_channels; ++z)
      row.channels.push_back(build_channel_lut(l.kernel(z), row.iterations, mode, nonneg, lp));
    lut.layers.push_back(std::move(row));
  }
  return lut;
}

inline void check_lut(const EstimateLUT& lut, const NetworkModel& m) {
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    const auto* row = lut.find(li);
    if (!row) throw Error("look-up table has no entry for layer " + l.name);
    if (row->iterations != l.input_spec.bit_width || static_cast<int>(row->channels.size()) != l.out_channels)
      throw Error("look-up table does not match layer " + l.name);
    for (const auto& ch : row->channels)
      if (ch.max.size() != static_cast<std::size_t>(row->iterations - 1) || ch.min.size() != ch.max.size())
        throw Error("look-up table row length mismatch in layer " + l.name);
  }
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const BitProbability& p) {
  nlohmann::ordered_json j;
  j["calibration_images"] = p.calibration_images;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  auto spans = [](const std::vector<ProbSpan>& v) {
    nlohmann::ordered_json o;
    std::vector<double> avg, mn, mx;
    for (const auto& s : v) {
      avg.push_back(s.avg);
      mn.push_back(s.min);
      mx.push_back(s.max);
    }
    o["avg"] = avg;
    o["min"] = mn;
    o["max"] = mx;
    return o;
  };
  for (const auto& l : p.layers) {
    nlohmann::ordered_json lj;
    lj["layer"] = l.layer;
    lj["name"] = l.name;
    lj["bits"] = l.bit_width;
    lj["nonnegative_inputs"] = l.nonnegative_inputs;
    lj["p_plus"] = spans(l.p_plus);
    lj["p_minus"] = spans(l.p_minus);
    layers.push_back(std::move(lj));
  }
  return j;
}

inline BitProbability probabilities_from_json(const nlohmann::json& j) {
  BitProbability p;
  try {
    p.calibration_images = j.value("calibration_images", std::size_t{0});
    auto spans = [](const nlohmann::json& o, std::size_t n) {
      const auto avg = o.at("avg").get<std::vector<double>>();
      const auto mn = o.at("min").get<std::vector<double>>();
      const auto mx = o.at("max").get<std::vector<double>>();
      if (avg.size() != n || mn.size() != n || mx.size() != n) throw Error("probability span length mismatch");
      std::vector<ProbSpan> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = {avg[i], mn[i], mx[i]};
      return v;
    };
    for (const auto& lj : j.at("layers")) {
      LayerBitProbability l;
      l.layer = lj.at("layer").get<std::size_t>();
      l.name = lj.value("name", "");
      l.bit_width = lj.at("bits").get<int>();
      l.nonnegative_inputs = lj.value("nonnegative_inputs", false);
      l.p_plus = spans(lj.at("p_plus"), static_cast<std::size_t>(l.bit_width));
      l.p_minus = spans(lj.at("p_minus"), static_cast<std::size_t>(l.bit_width));
      p.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed probability file: " + std::string(e.what()));
  }
  return p;
}

inline nlohmann::ordered_json to_json(const EstimateLUT& lut) {
  nlohmann::ordered_json j;
  j["bounds_mode"] = to_string(lut.mode);
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : lut.layers) {
    nlohmann::ordered_json lj;
    lj["layer"] = l.layer;
    lj["name"] = l.name;
    lj["iterations"] = l.iterations;
    auto& chans = lj["channels"] = nlohmann::ordered_json::array();
    for (const auto& c : l.channels) chans.push_back({{"max", c.max}, {"min", c.min}});
    layers.push_back(std::move(lj));
  }
  return j;
}

inline EstimateLUT lut_from_json(const nlohmann::json& j) {
  EstimateLUT lut;
  try {
    lut.mode = parse_bounds_mode(j.at("bounds_mode").get<std::string>());
    for (const auto& lj : j.at("layers")) {
      LayerLUT l;
      l.layer = lj.at("layer").get<std::size_t>();
      l.name = lj.value("name", "");
      l.iterations = lj.at("iterations").get<int>();
      for (const auto& cj : lj.at("channels"))
        l.channels.push_back({cj.at("max").get<std::vector<std::int64_t>>(),
                              cj.at("min").get<std::vector<std::int64_t>>()});
      lut.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed look-up table file: " + std::string(e.what()));
  }
  return lut;
}

template <class T>
void write_json_file(const std::filesystem::path& p, const T& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON in " + p.string() + ": " + e.what());
  }
}

}  // namespace xbarsim

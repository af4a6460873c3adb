#pragma once

// Bit-serial MAC execution, MSB first, with the two early-termination rules:
//   ReLU bypass     Accu + Max_t <= 0                    -> output 0
//   approximation   |Max_t| <= |Accu|*T and |Min_t| <= |Accu|*T -> keep Accu
// Max_t / Min_t bound the sum of the partial results still to come after
// iteration t and come from the look-up table, or from the exact remaining
// sum in oracle mode.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xbarsim/estimator.hpp"
#include "xbarsim/netgraph.hpp"
#include "xbarsim/qcore.hpp"

namespace xbarsim {

enum class Termination { None, ReluBypass, Approx };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::ReluBypass: return "relu_bypass";
    case Termination::Approx: return "approx";
  }
  return "?";
}

struct TerminationPolicy {
  bool relu_bypass = false;
  bool approx_enabled = false;
  double threshold = 0.0;
  BoundsMode bounds = BoundsMode::WorstCase;
  bool apply_to_fc = false;  // FC layers run exact unless set

  bool armed() const { return relu_bypass || approx_enabled; }
  void validate() const {
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw Error("threshold must be finite and >= 0");
  }
};

/// Per-layer constants a MAC needs to produce its output activation.
struct MacSite {
  FixedSpec input_spec;
  FixedSpec output_spec;
  int requant_shift = 0;
  bool has_relu = false;

  static MacSite of(const LayerDesc& l) { return {l.input_spec, l.output_spec, l.requant_shift(), l.has_relu}; }
  std::int32_t finish(std::int64_t acc) const {
    std::int32_t v = requantize(acc, requant_shift, output_spec);
    return has_relu && v < 0 ? 0 : v;
  }
};

struct MacTrace {
  int iterations_executed = 0;
  int total_iterations = 0;
  Termination termination = Termination::None;
  WideAccumulator final_accu;  // Accu when the MAC stopped
  WideAccumulator exact_accu;  // bias + full dot product, telemetry only
  int checks = 0;
  int bound_violations = 0;
};

struct MacResult {
  std::int32_t output = 0;
  MacTrace trace;
};

using BitPartials = std::array<std::int64_t, kMaxBits>;

/// partials[i] = sum_j digit_at(a_j, i) * w_j, the crossbar output for bit i
/// before the 2^i shift.
inline BitPartials bit_partials(std::span<const std::int32_t> activations, std::span<const std::int32_t> weights) {
  if (activations.size() != weights.size()) throw Error("bit_partials: length mismatch");
  BitPartials p{};
  for (std::size_t j = 0; j < activations.size(); ++j) {
    const std::int32_t a = activations[j];
    if (a == 0) continue;
    const std::int64_t w = a < 0 ? -static_cast<std::int64_t>(weights[j]) : weights[j];
    auto mag = static_cast<std::uint32_t>(a < 0 ? -a : a);
    while (mag != 0) {
      p[static_cast<std::size_t>(std::countr_zero(mag))] += w;
      mag &= mag - 1;
    }
  }
  return p;
}

/// Exact sum of the partial results still outstanding after iteration t.
inline std::int64_t oracle_remaining(const BitPartials& p, int t, int bits) {
  if (t < 1 || t > bits - 1) throw Error("oracle_remaining: iteration outside [1, N-1]");
  std::int64_t rem = 0;
  for (int i = 0; i < bits - t; ++i) rem += p[static_cast<std::size_t>(i)] * (std::int64_t{1} << i);
  return rem;
}

inline std::int64_t oracle_remaining(std::span<const std::int32_t> activations, std::span<const std::int32_t> weights,
                                     int t, int bits) {
  return oracle_remaining(bit_partials(activations, weights), t, bits);
}

/// Runs one MAC from precomputed bit partials. `lut_row` may be null only
/// when the policy is disarmed or uses oracle bounds.
inline MacResult mac_from_partials(const BitPartials& p, const ChannelLUT* lut_row, const TerminationPolicy& policy,
                                   std::int64_t bias_preload, const MacSite& site) {
  const int n = site.input_spec.bit_width;
  const bool oracle = policy.bounds == BoundsMode::Oracle;
  const bool relu_armed = policy.relu_bypass && site.has_relu;
  const bool approx_armed = policy.approx_enabled;
  const bool armed = relu_armed || approx_armed;
  if (armed && !oracle) {
    if (!lut_row) throw Error("mac_bitserial: look-up table row required");
    if (lut_row->max.size() != static_cast<std::size_t>(n - 1) || lut_row->min.size() != lut_row->max.size())
      throw Error("mac_bitserial: look-up table row length mismatch");
  }

  std::int64_t dot = 0;
  for (int i = 0; i < n; ++i) dot += p[static_cast<std::size_t>(i)] * (std::int64_t{1} << i);

  MacResult r;
  r.trace.total_iterations = n;
  r.trace.exact_accu = {bias_preload + dot};
  std::int64_t accu = bias_preload;
  const long double t_frac = policy.threshold;
  for (int t = 1; t <= n; ++t) {
    const int pos = n - t;
    accu += p[static_cast<std::size_t>(pos)] * (std::int64_t{1} << pos);
    r.trace.iterations_executed = t;
    if (t == n || !armed) continue;

    const std::int64_t remaining = bias_preload + dot - accu;
    std::int64_t max_t, min_t;
    if (oracle) {
      max_t = min_t = remaining;
    } else {
      max_t = lut_row->max[static_cast<std::size_t>(t - 1)];
      min_t = lut_row->min[static_cast<std::size_t>(t - 1)];
      if (remaining > max_t || remaining < min_t) ++r.trace.bound_violations;
    }
    ++r.trace.checks;

    if (relu_armed && accu + max_t <= 0) {
      r.trace.termination = Termination::ReluBypass;
      r.trace.final_accu = {accu};
      r.output = 0;
      return r;
    }
    if (approx_armed) {
      const long double allow = std::fabs(static_cast<long double>(accu)) * t_frac;
      if (std::fabs(static_cast<long double>(max_t)) <= allow && std::fabs(static_cast<long double>(min_t)) <= allow) {
        r.trace.termination = Termination::Approx;
        r.trace.final_accu = {accu};
        r.output = site.finish(accu);
        return r;
      }
    }
  }
  r.trace.final_accu = {accu};
  r.output = site.finish(accu);
  return r;
}

inline MacResult mac_bitserial(std::span<const std::int32_t> activations, std::span<const std::int32_t> weights,
                               const ChannelLUT* lut_row, const TerminationPolicy& policy, std::int64_t bias_preload,
                               const MacSite& site) {
  return mac_from_partials(bit_partials(activations, weights), lut_row, policy, bias_preload, site);
}

// ---------------------------------------------------------------------------
// Network-level execution and telemetry

struct LayerRunStats {
  std::size_t layer = 0;
  bool is_conv = false;
  std::uint64_t mac_count = 0;
  std::uint64_t iterations_executed = 0;
  std::uint64_t iterations_total = 0;
  std::uint64_t negative_output_count = 0;    // exact accumulator < 0 on a ReLU layer
  std::uint64_t negative_detected_count = 0;  // of those, stopped by ReLU bypass
  std::uint64_t false_bypass_count = 0;       // ReLU bypass on a positive exact result
  std::uint64_t relu_bypass_count = 0;
  std::uint64_t approx_count = 0;
  std::uint64_t negative_iterations_executed = 0;
  std::uint64_t negative_iterations_total = 0;
  std::uint64_t checks = 0;
  std::uint64_t bound_violations = 0;

  void record(const MacTrace& t, bool relu_layer) {
    ++mac_count;
    iterations_executed += static_cast<std::uint64_t>(t.iterations_executed);
    iterations_total += static_cast<std::uint64_t>(t.total_iterations);
    checks += static_cast<std::uint64_t>(t.checks);
    bound_violations += static_cast<std::uint64_t>(t.bound_violations);
    if (t.termination == Termination::ReluBypass) ++relu_bypass_count;
    if (t.termination == Termination::Approx) ++approx_count;
    if (relu_layer && t.exact_accu.value < 0) {
      ++negative_output_count;
      negative_iterations_executed += static_cast<std::uint64_t>(t.iterations_executed);
      negative_iterations_total += static_cast<std::uint64_t>(t.total_iterations);
      if (t.termination == Termination::ReluBypass) ++negative_detected_count;
    }
    if (t.termination == Termination::ReluBypass && t.exact_accu.value > 0) ++false_bypass_count;
  }

  LayerRunStats& operator+=(const LayerRunStats& o) {
    mac_count += o.mac_count;
    iterations_executed += o.iterations_executed;
    iterations_total += o.iterations_total;
    negative_output_count += o.negative_output_count;
    negative_detected_count += o.negative_detected_count;
    false_bypass_count += o.false_bypass_count;
    relu_bypass_count += o.relu_bypass_count;
    approx_count += o.approx_count;
    negative_iterations_executed += o.negative_iterations_executed;
    negative_iterations_total += o.negative_iterations_total;
    checks += o.checks;
    bound_violations += o.bound_violations;
    return *this;
  }
  friend bool operator==(const LayerRunStats&, const LayerRunStats&) = default;
};

/// Iterations executed by every output activation of one compute layer,
/// laid out [position][channel]. This is what the timing model consumes.
struct LayerOccupancy {
  std::size_t layer = 0;
  int positions = 0;
  int channels = 0;
  int total_iterations = 0;
  bool checked = false;  // evaluation logic consulted on this layer
  std::vector<std::uint8_t> iterations;

  std::uint8_t at(int pos, int ch) const {
    return iterations[static_cast<std::size_t>(pos) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(ch)];
  }
};

struct ReducedResult {
  std::vector<std::int32_t> logits;
  std::vector<LayerRunStats> stats;       // one per compute layer
  std::vector<LayerOccupancy> occupancy;  // one per compute layer
};

inline bool policy_applies(const TerminationPolicy& policy, const LayerDesc& l) {
  return policy.armed() && (l.kind == LayerKind::Conv || policy.apply_to_fc);
}

inline void check_lut_for_policy(const NetworkModel& m, const TerminationPolicy& policy, const EstimateLUT* lut) {
  policy.validate();
  if (!policy.armed() || policy.bounds == BoundsMode::Oracle) return;
  if (!lut) throw Error("missing LUT for " + to_string(policy.bounds) + " bounds");
  if (lut->mode != policy.bounds)
    throw Error("look-up table holds " + to_string(lut->mode) + " bounds, policy asks for " + to_string(policy.bounds));
  for (std::size_t li = 0; li < m.layers.size(); ++li)
    if (m.layers[li].is_compute() && policy_applies(policy, m.layers[li]) && !lut->find(li))
      throw Error("missing LUT for layer " + m.layers[li].name);
  check_lut(*lut, m);
}

inline ReducedResult infer_reduced(const NetworkModel& m, const QTensor& input, const TerminationPolicy& policy,
                                   const EstimateLUT* lut) {
  check_lut_for_policy(m, policy, lut);
  const TerminationPolicy off{};
  ReducedResult out;
  std::vector<std::size_t> slot(m.layers.size(), 0);
  std::vector<const LayerLUT*> rows(m.layers.size(), nullptr);
  std::vector<MacSite> sites(m.layers.size());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    slot[li] = out.stats.size();
    sites[li] = MacSite::of(l);
    const Shape3& os = m.shapes[li + 1];
    LayerRunStats s;
    s.layer = li;
    s.is_conv = l.kind == LayerKind::Conv;
    out.stats.push_back(s);
    const int positions = os.h * os.w;
    const bool applies = policy_applies(policy, l);
    out.occupancy.push_back({li, positions, l.out_channels, l.input_spec.bit_width, applies,
                             std::vector<std::uint8_t>(static_cast<std::size_t>(positions) * l.out_channels)});
    if (lut && applies && policy.bounds != BoundsMode::Oracle) rows[li] = lut->find(li);
  }

  auto res = run_network(
      m, input,
      [&](std::size_t li, std::size_t pos, int z, std::span<const std::int32_t> a, std::span<const std::int32_t> w,
          std::int64_t bias) {
        const auto& l = m.layers[li];
        const bool applies = policy_applies(policy, l);
        const ChannelLUT* row = rows[li] ? &rows[li]->channels[static_cast<std::size_t>(z)] : nullptr;
        const auto r = mac_bitserial(a, w, row, applies ? policy : off, bias, sites[li]);
        const auto k = slot[li];
        out.stats[k].record(r.trace, l.has_relu);
        auto& occ = out.occupancy[k];
        occ.iterations[pos * static_cast<std::size_t>(occ.channels) + static_cast<std::size_t>(z)] =
            static_cast<std::uint8_t>(r.trace.iterations_executed);
        return r.output;
      },
      false);
  out.logits = std::move(res.logits);
  return out;
}

struct ReductionReport {
  double reduction_overall = 0;           // CONV layers
  double reduction_negative_outputs = 0;  // CONV MACs whose exact result is negative
  double detection_rate = 0;
  double negative_share = 0;  // share of CONV iterations belonging to negative outputs
  double false_bypass_rate = 0;
  double reduction_fc = 0;
  std::uint64_t conv_macs = 0;
  std::uint64_t negative_outputs = 0;
  std::uint64_t bound_violations = 0;
};

inline ReductionReport reduction_report(std::span<const LayerRunStats> stats) {
  LayerRunStats conv, fc;
  for (const auto& s : stats) (s.is_conv ? conv : fc) += s;
  auto ratio = [](std::uint64_t a, std::uint64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  ReductionReport r;
  r.reduction_overall = conv.iterations_total == 0 ? 0.0 : 1.0 - ratio(conv.iterations_executed, conv.iterations_total);
  r.reduction_negative_outputs = conv.negative_iterations_total == 0
                                     ? 0.0
                                     : 1.0 - ratio(conv.negative_iterations_executed, conv.negative_iterations_total);
  r.detection_rate = ratio(conv.negative_detected_count, conv.negative_output_count);
  r.negative_share = ratio(conv.negative_iterations_total, conv.iterations_total);
  r.false_bypass_rate = ratio(conv.false_bypass_count, conv.mac_count);
  r.reduction_fc = fc.iterations_total == 0 ? 0.0 : 1.0 - ratio(fc.iterations_executed, fc.iterations_total);
  r.conv_macs = conv.mac_count;
  r.negative_outputs = conv.negative_output_count;
  r.bound_violations = conv.bound_violations + fc.bound_violations;
  return r;
}

inline void accumulate_stats(std::vector<LayerRunStats>& into, const std::vector<LayerRunStats>& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  if (into.size() != from.size()) throw Error("accumulate_stats: layer count mismatch");
  for (std::size_t k = 0; k < into.size(); ++k) into[k] += from[k];
}

}  // namespace xbarsim

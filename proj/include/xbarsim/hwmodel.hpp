#pragma once

// Crossbar/IPU/IMA/tile mapping and the event-driven latency, energy and
// area model. Each IPU holds a differential crossbar pair whose columns store
// 2-bit slices of sign-magnitude weights; one time-shared ADC converts the
// bitlines of one output activation per slot, so an iteration costs
// (live channel slots) x slot time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbarsim/engine.hpp"
#include "xbarsim/netgraph.hpp"

namespace xbarsim {

struct MemoryCost {
  double access_nj = 0;  // per access of bus_bits
  double leakage_mw = 0;
  double area_um2 = 0;
  int bus_bits = 128;
};

struct BusCost {
  double transfer_nj = 0;  // per transfer of bus_bits
  double area_um2 = 0;
  int bus_bits = 128;
};

struct UnitCost {
  double power_mw = 0;  // whole group of `count` units
  double area_um2 = 0;
  int count = 1;
};

/// Component constants; defaults are the 32 nm figures of the reference
/// design. Powers and areas are totals for the listed unit count.
struct HwConfig {
  int crossbar_rows = 128;
  int crossbar_cols = 128;
  int cell_bits = 2;
  int crossbars_per_ipu = 2;
  int ipus_per_ima = 8;
  int imas_per_tile = 8;
  int max_tiles = 4096;
  double stage_ns = 6.25;
  double adc_hz = 1.28e9;
  int partial_bits = 32;    // width of Accu / partial results on buses and in the output memory
  int lut_entry_bits = 16;  // width of one Max or Min entry
  bool leak_idle_tiles = false;  // false: only tiles of the running layer leak

  // centralized memories and buses
  MemoryCost input_memory{0.0188, 0.38, 46000, 256};
  MemoryCost output_memory{0.0008, 0.13, 3900, 128};
  MemoryCost lut{0.0035, 0.002, 9600, 160};
  BusCost input_bus{0.0042, 80000, 256};
  BusCost output_bus{0.0020, 39100, 128};
  // local memories, one of each per IMA
  MemoryCost input_buffer{0.0019, 0.42, 7400, 256};
  MemoryCost output_buffer{0.0005, 0.05, 2600, 128};
  // per IPU
  UnitCost dac{0.25, 668, 256};
  UnitCost adc{3.1, 1500, 1};
  double crossbar_power_cifar10_mw = 1.5;
  double crossbar_power_mnist_mw = 0.7;
  double crossbar_area_um2 = 264;
  UnitCost sample_hold{0.001, 5, 128};
  UnitCost ipu_shift_add{0.05, 60, 1};
  // per tile
  UnitCost eval_logic{0.79, 320, 8};
  UnitCost tile_shift_add{0.4, 480, 8};

  int ipus_per_tile() const { return ipus_per_ima * imas_per_tile; }

  /// Memristors per weight on each crossbar of the differential pair.
  int cells_per_weight(int weight_bits) const {
    const int magnitude = weight_bits - 1;
    return (magnitude + cell_bits - 1) / cell_bits;
  }
  int channels_per_ipu(int weight_bits) const { return crossbar_cols / cells_per_weight(weight_bits); }
  /// ADC time to convert the bitlines of one output activation.
  double slot_ns(int weight_bits) const { return cells_per_weight(weight_bits) / adc_hz * 1e9; }

  double crossbar_power_mw(const std::string& dataset) const {
    return dataset == "mnist" ? crossbar_power_mnist_mw : crossbar_power_cifar10_mw;
  }
  double ipu_power_mw(const std::string& dataset) const {
    return dac.power_mw + adc.power_mw + crossbar_power_mw(dataset) + sample_hold.power_mw + ipu_shift_add.power_mw;
  }
  double ipu_area_um2() const {
    return dac.area_um2 + adc.area_um2 + crossbar_area_um2 + sample_hold.area_um2 + ipu_shift_add.area_um2;
  }

  void validate() const {
    auto pos = [](double v, const char* what) {
      if (!(v > 0)) throw Error(std::string("hardware constant '") + what + "' must be positive");
    };
    pos(crossbar_rows, "crossbar_rows");
    pos(crossbar_cols, "crossbar_cols");
    pos(cell_bits, "cell_bits");
    pos(crossbars_per_ipu, "crossbars_per_ipu");
    pos(ipus_per_ima, "ipus_per_ima");
    pos(imas_per_tile, "imas_per_tile");
    pos(max_tiles, "max_tiles");
    pos(stage_ns, "stage_ns");
    pos(adc_hz, "adc_hz");
    pos(partial_bits, "partial_bits");
    pos(lut_entry_bits, "lut_entry_bits");
    for (const auto* m : {&input_memory, &output_memory, &lut, &input_buffer, &output_buffer}) {
      pos(m->access_nj, "memory energy");
      pos(m->leakage_mw, "memory leakage");
      pos(m->area_um2, "memory area");
      pos(m->bus_bits, "memory bus width");
    }
    for (const auto* b : {&input_bus, &output_bus}) {
      pos(b->transfer_nj, "bus energy");
      pos(b->area_um2, "bus area");
      pos(b->bus_bits, "bus width");
    }
    for (const auto* u : {&dac, &adc, &sample_hold, &ipu_shift_add, &eval_logic, &tile_shift_add}) {
      pos(u->power_mw, "unit power");
      pos(u->area_um2, "unit area");
      pos(u->count, "unit count");
    }
    pos(crossbar_power_cifar10_mw, "crossbar_power_cifar10_mw");
    pos(crossbar_power_mnist_mw, "crossbar_power_mnist_mw");
    pos(crossbar_area_um2, "crossbar_area_um2");
  }
};

namespace detail {

inline nlohmann::ordered_json to_json(const MemoryCost& m) {
  return {{"energy_nj", m.access_nj}, {"leakage_mw", m.leakage_mw}, {"area_um2", m.area_um2}, {"bus_bits", m.bus_bits}};
}
inline nlohmann::ordered_json to_json(const BusCost& b) {
  return {{"energy_nj", b.transfer_nj}, {"area_um2", b.area_um2}, {"bus_bits", b.bus_bits}};
}
inline nlohmann::ordered_json to_json(const UnitCost& u) {
  return {{"power_mw", u.power_mw}, {"area_um2", u.area_um2}, {"num", u.count}};
}
inline void from_json(const nlohmann::json& j, MemoryCost& m) {
  m.access_nj = j.value("energy_nj", m.access_nj);
  m.leakage_mw = j.value("leakage_mw", m.leakage_mw);
  m.area_um2 = j.value("area_um2", m.area_um2);
  m.bus_bits = j.value("bus_bits", m.bus_bits);
}
inline void from_json(const nlohmann::json& j, BusCost& b) {
  b.transfer_nj = j.value("energy_nj", b.transfer_nj);
  b.area_um2 = j.value("area_um2", b.area_um2);
  b.bus_bits = j.value("bus_bits", b.bus_bits);
}
inline void from_json(const nlohmann::json& j, UnitCost& u) {
  u.power_mw = j.value("power_mw", u.power_mw);
  u.area_um2 = j.value("area_um2", u.area_um2);
  u.count = j.value("num", u.count);
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const HwConfig& c) {
  using detail::to_json;
  nlohmann::ordered_json j;
  j["crossbar"] = {{"rows", c.crossbar_rows}, {"cols", c.crossbar_cols}, {"cell_bits", c.cell_bits},
                   {"num", c.crossbars_per_ipu}, {"power_cifar10_mw", c.crossbar_power_cifar10_mw},
                   {"power_mnist_mw", c.crossbar_power_mnist_mw}, {"area_um2", c.crossbar_area_um2}};
  j["organization"] = {{"ipus_per_ima", c.ipus_per_ima}, {"imas_per_tile", c.imas_per_tile}, {"max_tiles", c.max_tiles}};
  j["timing"] = {{"stage_ns", c.stage_ns}, {"adc_hz", c.adc_hz}};
  j["datapath"] = {{"partial_bits", c.partial_bits}, {"lut_entry_bits", c.lut_entry_bits}};
  j["leak_idle_tiles"] = c.leak_idle_tiles;
  j["input_memory"] = to_json(c.input_memory);
  j["output_memory"] = to_json(c.output_memory);
  j["estimation_lut"] = to_json(c.lut);
  j["input_bus"] = to_json(c.input_bus);
  j["output_bus"] = to_json(c.output_bus);
  j["input_buffer"] = to_json(c.input_buffer);
  j["output_buffer"] = to_json(c.output_buffer);
  j["dac"] = to_json(c.dac);
  j["adc"] = to_json(c.adc);
  j["sample_hold"] = to_json(c.sample_hold);
  j["ipu_shift_add"] = to_json(c.ipu_shift_add);
  j["evaluation_logic"] = to_json(c.eval_logic);
  j["tile_shift_add"] = to_json(c.tile_shift_add);
  return j;
}

/// Any key may be omitted; omitted keys keep their defaults.
inline HwConfig hw_config_from_json(const nlohmann::json& j) {
  HwConfig c;
  try {
    if (j.contains("crossbar")) {
      const auto& x = j["crossbar"];
      c.crossbar_rows = x.value("rows", c.crossbar_rows);
      c.crossbar_cols = x.value("cols", c.crossbar_cols);
      c.cell_bits = x.value("cell_bits", c.cell_bits);
      c.crossbars_per_ipu = x.value("num", c.crossbars_per_ipu);
      c.crossbar_power_cifar10_mw = x.value("power_cifar10_mw", c.crossbar_power_cifar10_mw);
      c.crossbar_power_mnist_mw = x.value("power_mnist_mw", c.crossbar_power_mnist_mw);
      c.crossbar_area_um2 = x.value("area_um2", c.crossbar_area_um2);
    }
    if (j.contains("organization")) {
      const auto& o = j["organization"];
      c.ipus_per_ima = o.value("ipus_per_ima", c.ipus_per_ima);
      c.imas_per_tile = o.value("imas_per_tile", c.imas_per_tile);
      c.max_tiles = o.value("max_tiles", c.max_tiles);
    }
    if (j.contains("timing")) {
      c.stage_ns = j["timing"].value("stage_ns", c.stage_ns);
      c.adc_hz = j["timing"].value("adc_hz", c.adc_hz);
    }
    if (j.contains("datapath")) {
      c.partial_bits = j["datapath"].value("partial_bits", c.partial_bits);
      c.lut_entry_bits = j["datapath"].value("lut_entry_bits", c.lut_entry_bits);
    }
    c.leak_idle_tiles = j.value("leak_idle_tiles", c.leak_idle_tiles);
    auto take = [&j](const char* key, auto& dst) {
      if (j.contains(key)) detail::from_json(j[key], dst);
    };
    take("input_memory", c.input_memory);
    take("output_memory", c.output_memory);
    take("estimation_lut", c.lut);
    take("input_bus", c.input_bus);
    take("output_bus", c.output_bus);
    take("input_buffer", c.input_buffer);
    take("output_buffer", c.output_buffer);
    take("dac", c.dac);
    take("adc", c.adc);
    take("sample_hold", c.sample_hold);
    take("ipu_shift_add", c.ipu_shift_add);
    take("evaluation_logic", c.eval_logic);
    take("tile_shift_add", c.tile_shift_add);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed hardware config: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Mapping

struct IpuAddress {
  int tile = 0, ima = 0, ipu = 0;
  friend bool operator==(const IpuAddress&, const IpuAddress&) = default;
};

/// Up to channels_per_ipu output channels sharing the same IPUs; one IPU per
/// 128-row group of the kernel.
struct KernelGroup {
  int channel_begin = 0;
  int channel_end = 0;
  std::vector<IpuAddress> ipus;
  int imas_spanned = 0;
  int channels() const { return channel_end - channel_begin; }
};

struct LayerMapping {
  std::size_t layer = 0;
  bool is_conv = false;
  int rows = 0;
  int row_groups = 0;
  int weight_bits = 0;
  int activation_bits = 0;
  int cells_per_weight = 0;
  int channels_per_ipu = 0;
  int positions = 0;
  int tiles = 0;  // tiles holding at least one of its IPUs
  std::vector<KernelGroup> groups;

  int ipus() const { return row_groups * static_cast<int>(groups.size()); }
  /// Crossbar rows a kernel occupies in row group g.
  int rows_in_group(int g) const { return std::min(128, rows - g * 128); }
};

struct MappingPlan {
  std::vector<LayerMapping> layers;
  int ipus_used = 0;
  int imas_used = 0;
  int tiles_used = 0;

  const LayerMapping* find(std::size_t layer) const {
    for (const auto& l : layers)
      if (l.layer == layer) return &l;
    return nullptr;
  }
};

/// Kernels fill the IPUs of one IMA before spilling into the next; a kernel
/// that needs more row groups than an IMA holds starts on an IMA boundary.
inline MappingPlan map_network(const NetworkModel& m, const HwConfig& hw) {
  MappingPlan plan;
  const int per_ima = hw.ipus_per_ima;
  const int per_tile = hw.ipus_per_tile();
  long cursor = 0;
  auto address = [&](long g) {
    return IpuAddress{static_cast<int>(g / per_tile), static_cast<int>((g / per_ima) % hw.imas_per_tile),
                      static_cast<int>(g % per_ima)};
  };
  auto round_up = [per_ima](long g) { return (g + per_ima - 1) / per_ima * per_ima; };
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    LayerMapping lm;
    lm.layer = li;
    lm.is_conv = l.kind == LayerKind::Conv;
    lm.rows = static_cast<int>(l.kernel_size());
    lm.row_groups = (lm.rows + hw.crossbar_rows - 1) / hw.crossbar_rows;
    lm.weight_bits = l.weight_spec.bit_width;
    lm.activation_bits = l.input_spec.bit_width;
    lm.cells_per_weight = hw.cells_per_weight(lm.weight_bits);
    lm.channels_per_ipu = hw.channels_per_ipu(lm.weight_bits);
    if (lm.channels_per_ipu < 1) throw Error("weights of layer " + l.name + " do not fit a crossbar row");
    lm.positions = m.shapes[li + 1].h * m.shapes[li + 1].w;
    for (int c0 = 0; c0 < l.out_channels; c0 += lm.channels_per_ipu) {
      KernelGroup g;
      g.channel_begin = c0;
      g.channel_end = std::min(l.out_channels, c0 + lm.channels_per_ipu);
      const long need = lm.row_groups;
      if (need > per_ima || (cursor % per_ima) + need > per_ima) cursor = round_up(cursor);
      std::set<std::pair<int, int>> imas;
      for (long k = 0; k < need; ++k) {
        const auto a = address(cursor + k);
        g.ipus.push_back(a);
        imas.insert({a.tile, a.ima});
      }
      g.imas_spanned = static_cast<int>(imas.size());
      cursor += need;
      lm.groups.push_back(std::move(g));
    }
    std::set<int> tiles;
    for (const auto& g : lm.groups)
      for (const auto& a : g.ipus) tiles.insert(a.tile);
    lm.tiles = static_cast<int>(tiles.size());
    plan.layers.push_back(std::move(lm));
  }
  plan.ipus_used = static_cast<int>(cursor);
  plan.imas_used = static_cast<int>((cursor + per_ima - 1) / per_ima);
  plan.tiles_used = static_cast<int>((cursor + per_tile - 1) / per_tile);
  if (plan.tiles_used > hw.max_tiles)
    throw Error("model needs " + std::to_string(plan.tiles_used) + " tiles, budget is " + std::to_string(hw.max_tiles));
  return plan;
}

// ---------------------------------------------------------------------------
// Crossbar-faithful partial result

/// Differential 2-bit slices of one sign-magnitude weight, LSB slice first.
struct WeightSlices {
  std::vector<int> positive;
  std::vector<int> negative;
};

inline WeightSlices slice_weight(std::int32_t w, int weight_bits, int cell_bits) {
  const int cells = (weight_bits - 1 + cell_bits - 1) / cell_bits;
  const std::uint32_t mask = (1u << cell_bits) - 1;
  WeightSlices s{std::vector<int>(static_cast<std::size_t>(cells)), std::vector<int>(static_cast<std::size_t>(cells))};
  auto mag = static_cast<std::uint32_t>(w < 0 ? -w : w);
  auto& dst = w < 0 ? s.negative : s.positive;
  for (int k = 0; k < cells; ++k) dst[static_cast<std::size_t>(k)] = static_cast<int>((mag >> (k * cell_bits)) & mask);
  return s;
}

/// One crossbar iteration: +1 digits and -1 digits drive the 1-bit DACs in
/// two phases; each phase subtracts the negative-array bitline from the
/// positive-array bitline, then slices recombine by shift-add.
inline std::int64_t crossbar_mac_faithful(std::span<const int> digits, std::span<const WeightSlices> columns,
                                          int cell_bits) {
  if (digits.size() != columns.size()) throw Error("crossbar_mac_faithful: length mismatch");
  if (columns.empty()) return 0;
  const std::size_t cells = columns.front().positive.size();
  std::int64_t result = 0;
  for (std::size_t k = 0; k < cells; ++k) {
    std::int64_t pos_phase = 0, neg_phase = 0;  // differential bitline value per phase
    for (std::size_t j = 0; j < digits.size(); ++j) {
      if (digits[j] == 0) continue;
      const std::int64_t diff = columns[j].positive[k] - columns[j].negative[k];
      (digits[j] > 0 ? pos_phase : neg_phase) += diff;
    }
    result += (pos_phase - neg_phase) * (std::int64_t{1} << (k * static_cast<std::size_t>(cell_bits)));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Timing

struct LayerTiming {
  std::size_t layer = 0;
  double latency_ns = 0;
};

struct TimingReport {
  std::vector<LayerTiming> layers;
  double frame_latency_ns = 0;
  double throughput_fps() const { return frame_latency_ns > 0 ? 1e9 / frame_latency_ns : 0.0; }
};

/// Occupancy of a run with no early termination.
inline std::vector<LayerOccupancy> full_occupancy(const NetworkModel& m) {
  std::vector<LayerOccupancy> occ;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    if (!l.is_compute()) continue;
    const int positions = m.shapes[li + 1].h * m.shapes[li + 1].w;
    const int n = l.input_spec.bit_width;
    occ.push_back({li, positions, l.out_channels, n, false,
                   std::vector<std::uint8_t>(static_cast<std::size_t>(positions) * l.out_channels,
                                             static_cast<std::uint8_t>(n))});
  }
  return occ;
}

namespace detail {

inline const LayerOccupancy& occupancy_for(std::span<const LayerOccupancy> occ, std::size_t layer) {
  for (const auto& o : occ)
    if (o.layer == layer) return o;
  throw Error("no occupancy for layer " + std::to_string(layer));
}

}  // namespace detail

/// Layers run one after another; inside a layer every MAC position waits for
/// its slowest IPU, whose time is the sum over iterations of live slots.
inline TimingReport simulate_timing(std::span<const LayerOccupancy> occ, const MappingPlan& plan, const HwConfig& hw) {
  TimingReport rep;
  for (const auto& lm : plan.layers) {
    const auto& o = detail::occupancy_for(occ, lm.layer);
    if (o.positions != lm.positions) throw Error("occupancy does not match mapping plan");
    const double slot = hw.slot_ns(lm.weight_bits);
    double latency = 0;
    for (int pos = 0; pos < o.positions; ++pos) {
      std::uint64_t slowest = 0;
      for (const auto& g : lm.groups) {
        std::uint64_t busy = 0;
        for (int ch = g.channel_begin; ch < g.channel_end; ++ch) busy += o.at(pos, ch);
        slowest = std::max(slowest, busy);
      }
      latency += static_cast<double>(slowest) * slot;
    }
    rep.layers.push_back({lm.layer, latency});
    rep.frame_latency_ns += latency;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Energy

/// Event counts of one or more frames. Memory and bus traffic is expressed
/// in accesses of the component's bus width and may be fractional.
struct EventCounts {
  double frames = 0;
  double slot_iterations = 0;     // live channel slot x iteration x row-group IPU
  double channel_iterations = 0;  // tile-level shift-add of one output per iteration
  double ipu_iterations = 0;      // IPU iterations with at least one live slot
  double input_memory_reads = 0;
  double input_bus_transfers = 0;
  double input_buffer_accesses = 0;
  double output_buffer_accesses = 0;
  double output_bus_transfers = 0;
  double output_memory_accesses = 0;
  // estimation overhead
  double checks = 0;
  double lut_reads = 0;
  double extra_bus_transfers = 0;
  double extra_output_memory_accesses = 0;

  EventCounts& operator+=(const EventCounts& o) {
    frames += o.frames;
    slot_iterations += o.slot_iterations;
    channel_iterations += o.channel_iterations;
    ipu_iterations += o.ipu_iterations;
    input_memory_reads += o.input_memory_reads;
    input_bus_transfers += o.input_bus_transfers;
    input_buffer_accesses += o.input_buffer_accesses;
    output_buffer_accesses += o.output_buffer_accesses;
    output_bus_transfers += o.output_bus_transfers;
    output_memory_accesses += o.output_memory_accesses;
    checks += o.checks;
    lut_reads += o.lut_reads;
    extra_bus_transfers += o.extra_bus_transfers;
    extra_output_memory_accesses += o.extra_output_memory_accesses;
    return *this;
  }
};

inline EventCounts count_events(std::span<const LayerOccupancy> occ, const MappingPlan& plan, const HwConfig& hw) {
  EventCounts ev;
  ev.frames = 1;
  for (const auto& lm : plan.layers) {
    const auto& o = detail::occupancy_for(occ, lm.layer);
    const int n = o.total_iterations;
    const double window_bits = static_cast<double>(lm.rows) * lm.activation_bits;
    std::set<std::pair<int, int>> imas;
    for (const auto& g : lm.groups)
      for (const auto& a : g.ipus) imas.insert({a.tile, a.ima});
    const double out_bits = lm.weight_bits;  // output activation width
    for (int pos = 0; pos < o.positions; ++pos) {
      // fetch the input window once, deliver it to every IMA of the layer
      ev.input_memory_reads += window_bits / hw.input_memory.bus_bits;
      ev.input_bus_transfers += window_bits / hw.input_bus.bus_bits * static_cast<double>(imas.size());
      ev.input_buffer_accesses += window_bits / hw.input_buffer.bus_bits * static_cast<double>(imas.size());
      for (const auto& g : lm.groups) {
        int longest = 0;
        for (int ch = g.channel_begin; ch < g.channel_end; ++ch) {
          const int it = o.at(pos, ch);
          longest = std::max(longest, it);
          ev.slot_iterations += static_cast<double>(it) * lm.row_groups;
          ev.channel_iterations += it;
          if (o.checked) {
            const double checks = std::min(it, n - 1);
            ev.checks += checks;
            ev.lut_reads += checks * 2.0 * hw.lut_entry_bits / hw.lut.bus_bits;
            ev.extra_bus_transfers += checks * g.imas_spanned * static_cast<double>(hw.partial_bits) / hw.output_bus.bus_bits;
            ev.extra_output_memory_accesses += checks * 2.0 * hw.partial_bits / hw.output_memory.bus_bits;
          }
        }
        ev.ipu_iterations += static_cast<double>(longest) * lm.row_groups;
        // one 1-bit slice of the IPU's rows per iteration
        for (int rg = 0; rg < lm.row_groups; ++rg)
          ev.input_buffer_accesses += static_cast<double>(longest) * lm.rows_in_group(rg) / hw.input_buffer.bus_bits;
        const double outputs = g.channels();
        ev.output_buffer_accesses += outputs * out_bits / hw.output_buffer.bus_bits;
        ev.output_bus_transfers += outputs * out_bits / hw.output_bus.bus_bits;
        ev.output_memory_accesses += outputs * out_bits / hw.output_memory.bus_bits;
      }
    }
  }
  return ev;
}

struct EnergyReport {
  // dynamic, nJ
  double dac = 0, adc = 0, crossbar = 0, sample_hold = 0, ipu_shift_add = 0, tile_shift_add = 0;
  double input_memory = 0, input_bus = 0, input_buffer = 0;
  double output_buffer = 0, output_bus = 0, output_memory = 0;
  // estimation overhead, nJ
  double evaluation_logic = 0, lut_reads = 0, extra_bus = 0, extra_output_memory = 0;
  double leakage = 0;

  double compute() const { return dac + adc + crossbar + sample_hold + ipu_shift_add + tile_shift_add; }
  double data_movement() const {
    return input_memory + input_bus + input_buffer + output_buffer + output_bus + output_memory;
  }
  double overhead() const { return evaluation_logic + lut_reads + extra_bus + extra_output_memory; }
  double dynamic() const { return compute() + data_movement() + overhead(); }
  double total() const { return dynamic() + leakage; }
};

/// Energy of everything except the IPU analog path (see add_ipu_energy);
/// leakage follows `timing`. mW x ns = pJ.
inline EnergyReport energy(const EventCounts& ev, const MappingPlan& plan, const HwConfig& hw,
                           const TimingReport& timing, bool estimation_hw) {
  EnergyReport e;
  const double pj = 1e-3;
  auto unit = [&](const UnitCost& u) { return u.power_mw / u.count * hw.stage_ns * pj; };
  e.tile_shift_add = ev.channel_iterations * unit(hw.tile_shift_add);
  e.input_memory = ev.input_memory_reads * hw.input_memory.access_nj;
  e.input_bus = ev.input_bus_transfers * hw.input_bus.transfer_nj;
  e.input_buffer = ev.input_buffer_accesses * hw.input_buffer.access_nj;
  e.output_buffer = ev.output_buffer_accesses * hw.output_buffer.access_nj;
  e.output_bus = ev.output_bus_transfers * hw.output_bus.transfer_nj;
  e.output_memory = ev.output_memory_accesses * hw.output_memory.access_nj;
  e.evaluation_logic = ev.checks * unit(hw.eval_logic);
  e.lut_reads = ev.lut_reads * hw.lut.access_nj;
  e.extra_bus = ev.extra_bus_transfers * hw.output_bus.transfer_nj;
  e.extra_output_memory = ev.extra_output_memory_accesses * hw.output_memory.access_nj;
  const double tile_leak = hw.input_memory.leakage_mw + hw.output_memory.leakage_mw +
                           (estimation_hw ? hw.lut.leakage_mw : 0.0) +
                           hw.imas_per_tile * (hw.input_buffer.leakage_mw + hw.output_buffer.leakage_mw);
  if (hw.leak_idle_tiles) {
    e.leakage = plan.tiles_used * tile_leak * timing.frame_latency_ns * pj;
  } else {
    for (const auto& l : timing.layers) {
      const auto* lm = plan.find(l.layer);
      e.leakage += (lm ? lm->tiles : 0) * tile_leak * l.latency_ns * pj;
    }
  }
  return e;
}

/// Adds the IPU analog energy (DAC, ADC, crossbar pair, sample-hold, local
/// shift-add) of every live slot iteration in `occ`.
inline void add_ipu_energy(EnergyReport& e, std::span<const LayerOccupancy> occ, const MappingPlan& plan,
                           const HwConfig& hw, const std::string& dataset) {
  const double pj = 1e-3;
  for (const auto& lm : plan.layers) {
    const auto& o = detail::occupancy_for(occ, lm.layer);
    std::uint64_t live = 0;
    for (auto it : o.iterations) live += it;
    const double slot_time = static_cast<double>(live) * lm.row_groups * hw.slot_ns(lm.weight_bits) * pj;
    e.dac += slot_time * hw.dac.power_mw;
    e.adc += slot_time * hw.adc.power_mw;
    e.crossbar += slot_time * hw.crossbar_power_mw(dataset);
    e.sample_hold += slot_time * hw.sample_hold.power_mw;
    e.ipu_shift_add += slot_time * hw.ipu_shift_add.power_mw;
  }
}

// ---------------------------------------------------------------------------
// Area

struct AreaReport {
  double ipus_mm2 = 0;
  double local_buffers_mm2 = 0;
  double shared_mm2 = 0;  // centralized memories, buses, tile shift-add
  double lut_mm2 = 0;
  double evaluation_logic_mm2 = 0;
  double total() const { return ipus_mm2 + local_buffers_mm2 + shared_mm2 + lut_mm2 + evaluation_logic_mm2; }
};

inline AreaReport area(const MappingPlan& plan, const HwConfig& hw, bool estimation_hw) {
  const double mm2 = 1e-6;
  const double tiles = plan.tiles_used;
  AreaReport a;
  a.ipus_mm2 = tiles * hw.ipus_per_tile() * hw.ipu_area_um2() * mm2;
  a.local_buffers_mm2 = tiles * hw.imas_per_tile * (hw.input_buffer.area_um2 + hw.output_buffer.area_um2) * mm2;
  a.shared_mm2 = tiles *
                 (hw.input_memory.area_um2 + hw.output_memory.area_um2 + hw.input_bus.area_um2 +
                  hw.output_bus.area_um2 + hw.tile_shift_add.area_um2) *
                 mm2;
  if (estimation_hw) {
    a.lut_mm2 = tiles * hw.lut.area_um2 * mm2;
    a.evaluation_logic_mm2 = tiles * hw.eval_logic.area_um2 * mm2;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Whole-run evaluation

/// Per-frame hardware figures for a set of runs over one mapping plan.
struct HwReport {
  EventCounts events;  // per frame
  TimingReport timing;  // per frame (average)
  EnergyReport energy;  // per frame
  AreaReport area;
  double energy_per_frame_nj() const { return energy.total(); }
  double energy_efficiency() const { return energy.total() > 0 ? 1e9 / energy.total() : 0.0; }  // frames/J
  double throughput_fps() const { return timing.throughput_fps(); }
  double area_efficiency() const { return area.total() > 0 ? throughput_fps() / area.total() : 0.0; }
  double overhead_share() const { return energy.total() > 0 ? energy.overhead() / energy.total() : 0.0; }
};

/// Accumulates frames, then reports per-frame averages.
class HwAccumulator {
 public:
  HwAccumulator(const MappingPlan& plan, const HwConfig& hw, std::string dataset, bool estimation_hw)
      : plan_(plan), hw_(hw), dataset_(std::move(dataset)), estimation_hw_(estimation_hw) {}

  void add(std::span<const LayerOccupancy> occ) {
    events_ += count_events(occ, plan_, hw_);
    const auto t = simulate_timing(occ, plan_, hw_);
    if (timing_.layers.empty()) timing_ = t;
    else {
      for (std::size_t k = 0; k < t.layers.size(); ++k) timing_.layers[k].latency_ns += t.layers[k].latency_ns;
      timing_.frame_latency_ns += t.frame_latency_ns;
    }
    add_ipu_energy(ipu_, occ, plan_, hw_, dataset_);
  }

  HwReport report() const {
    HwReport r;
    const double n = events_.frames;
    if (n == 0) throw Error("no frames recorded");
    r.timing = timing_;
    for (auto& l : r.timing.layers) l.latency_ns /= n;
    r.timing.frame_latency_ns /= n;
    EventCounts ev = events_;
    scale(ev, 1.0 / n);
    r.events = ev;
    r.energy = energy(ev, plan_, hw_, r.timing, estimation_hw_);
    r.energy.dac = ipu_.dac / n;
    r.energy.adc = ipu_.adc / n;
    r.energy.crossbar = ipu_.crossbar / n;
    r.energy.sample_hold = ipu_.sample_hold / n;
    r.energy.ipu_shift_add = ipu_.ipu_shift_add / n;
    r.area = area(plan_, hw_, estimation_hw_);
    return r;
  }

 private:
  static void scale(EventCounts& ev, double f) {
    for (double* p : {&ev.frames, &ev.slot_iterations, &ev.channel_iterations, &ev.ipu_iterations,
                      &ev.input_memory_reads, &ev.input_bus_transfers, &ev.input_buffer_accesses,
                      &ev.output_buffer_accesses, &ev.output_bus_transfers, &ev.output_memory_accesses, &ev.checks,
                      &ev.lut_reads, &ev.extra_bus_transfers, &ev.extra_output_memory_accesses})
      *p *= f;
  }

  MappingPlan plan_;
  HwConfig hw_;
  std::string dataset_;
  bool estimation_hw_;
  EventCounts events_;
  TimingReport timing_;
  EnergyReport ipu_;
};

inline HwReport evaluate_hw(std::span<const LayerOccupancy> occ, const MappingPlan& plan, const HwConfig& hw,
                            const std::string& dataset, bool estimation_hw) {
  HwAccumulator acc(plan, hw, dataset, estimation_hw);
  acc.add(occ);
  return acc.report();
}

struct Comparison {
  HwReport baseline;
  HwReport reduced;
  double energy_efficiency_ratio() const { return reduced.energy.total() > 0 ? baseline.energy.total() / reduced.energy.total() : 0.0; }
  double throughput_ratio() const { return baseline.throughput_fps() > 0 ? reduced.throughput_fps() / baseline.throughput_fps() : 0.0; }
  double area_efficiency_ratio() const { return baseline.area_efficiency() > 0 ? reduced.area_efficiency() / baseline.area_efficiency() : 0.0; }
  double area_overhead() const { return baseline.area.total() > 0 ? reduced.area.total() / baseline.area.total() - 1.0 : 0.0; }
};

inline nlohmann::ordered_json to_json(const HwReport& r) {
  nlohmann::ordered_json j;
  const auto& e = r.energy;
  j["energy_nj_per_frame"] = {
      {"dac", e.dac}, {"adc", e.adc}, {"crossbar", e.crossbar}, {"sample_hold", e.sample_hold},
      {"ipu_shift_add", e.ipu_shift_add}, {"tile_shift_add", e.tile_shift_add}, {"input_memory", e.input_memory},
      {"input_bus", e.input_bus}, {"input_buffer", e.input_buffer}, {"output_buffer", e.output_buffer},
      {"output_bus", e.output_bus}, {"output_memory", e.output_memory}, {"evaluation_logic", e.evaluation_logic},
      {"lut_reads", e.lut_reads}, {"extra_bus", e.extra_bus}, {"extra_output_memory", e.extra_output_memory},
      {"leakage", e.leakage}, {"overhead", e.overhead()}, {"total", e.total()}};
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : r.timing.layers) layers.push_back({{"layer", l.layer}, {"latency_ns", l.latency_ns}});
  j["timing"] = {{"frame_latency_ns", r.timing.frame_latency_ns}, {"throughput_fps", r.throughput_fps()}, {"layers", layers}};
  j["area_mm2"] = {{"ipus", r.area.ipus_mm2}, {"local_buffers", r.area.local_buffers_mm2}, {"shared", r.area.shared_mm2},
                   {"lut", r.area.lut_mm2}, {"evaluation_logic", r.area.evaluation_logic_mm2}, {"total", r.area.total()}};
  j["energy_efficiency_frames_per_j"] = r.energy_efficiency();
  j["area_efficiency_fps_per_mm2"] = r.area_efficiency();
  j["overhead_share"] = r.overhead_share();
  return j;
}

inline nlohmann::ordered_json to_json(const Comparison& c) {
  return {{"baseline", to_json(c.baseline)},
          {"reduced", to_json(c.reduced)},
          {"ratios",
           {{"energy_efficiency", c.energy_efficiency_ratio()},
            {"throughput", c.throughput_ratio()},
            {"area_efficiency", c.area_efficiency_ratio()},
            {"area_overhead", c.area_overhead()}}}};
}

}  // namespace xbarsim

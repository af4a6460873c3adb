#pragma once

// Benchmark topologies with seeded random weights. The hardware model only
// needs layer shapes, so these stand in for trained models when reproducing
// model-level ratios from a given computation reduction.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xbarsim/engine.hpp"
#include "xbarsim/netgraph.hpp"
#include "xbarsim/rng.hpp"

namespace xbarsim {

namespace detail {

struct LayerBuilder {
  NetworkModel& m;
  Rng& rng;
  FixedSpec act;
  FixedSpec weight;
  FixedSpec bias;
  int channels;

  void fill(LayerDesc& l) {
    l.input_spec = l.output_spec = act;
    l.weight_spec = weight;
    l.bias_spec = bias;
    l.has_bias = true;
    l.weights.shape = {static_cast<std::size_t>(l.out_channels), static_cast<std::size_t>(l.in_channels),
                       static_cast<std::size_t>(l.kernel_h), static_cast<std::size_t>(l.kernel_w)};
    l.weights.spec = weight;
    // keep sums of |w * a| within reach of the output range
    const auto fan_in = static_cast<double>(l.kernel_size());
    const auto limit = std::max<std::int64_t>(1, static_cast<std::int64_t>(weight.max_value() / std::sqrt(fan_in)));
    l.weights.data.resize(l.weights.element_count());
    for (auto& w : l.weights.data) w = static_cast<std::int32_t>(uniform_int(rng, -limit, limit));
    l.bias.shape = {static_cast<std::size_t>(l.out_channels)};
    l.bias.spec = bias;
    l.bias.data.resize(static_cast<std::size_t>(l.out_channels));
    const auto blimit = bias.max_value() / 8;
    for (auto& b : l.bias.data) b = static_cast<std::int32_t>(uniform_int(rng, -blimit, blimit));
  }

  void conv(const std::string& name, int out, int k, int pad, bool relu) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::Conv;
    l.kernel_h = l.kernel_w = k;
    l.in_channels = channels;
    l.out_channels = out;
    l.padding = pad;
    l.has_relu = relu;
    fill(l);
    m.layers.push_back(std::move(l));
    channels = out;
  }

  void fc(const std::string& name, int in, int out, bool relu) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::FC;
    l.in_channels = in;
    l.out_channels = out;
    l.has_relu = relu;
    fill(l);
    m.layers.push_back(std::move(l));
  }

  void pool(const std::string& name, LayerKind kind, int k, int stride, int pad) {
    LayerDesc l;
    l.name = name;
    l.kind = kind;
    l.kernel_h = l.kernel_w = k;
    l.stride = stride;
    l.padding = pad;
    l.in_channels = l.out_channels = channels;
    l.input_spec = l.output_spec = act;
    m.layers.push_back(std::move(l));
  }
};

inline FixedSpec act_spec(int bits) { return {bits, bits / 2, true}; }
inline FixedSpec weight_spec(int bits) { return {bits, bits - 2, true}; }

}  // namespace detail

/// LeNet-5 in its Caffe form: CONV layers without ReLU.
inline NetworkModel lenet5(int bits, std::uint64_t seed = 1) {
  NetworkModel m;
  m.name = "lenet5-" + std::to_string(bits);
  m.dataset = "mnist";
  m.input_shape = {1, 28, 28};
  m.num_classes = 10;
  m.preprocess.scale = 1.0 / 255.0;
  Rng rng(seed);
  detail::LayerBuilder b{m, rng, detail::act_spec(bits), detail::weight_spec(bits), detail::act_spec(bits), 1};
  b.conv("conv1", 20, 5, 0, false);
  b.pool("pool1", LayerKind::MaxPool, 2, 2, 0);
  b.conv("conv2", 50, 5, 0, false);
  b.pool("pool2", LayerKind::MaxPool, 2, 2, 0);
  b.fc("fc1", 800, 500, true);
  b.fc("fc2", 500, 10, false);
  m.validate();
  return m;
}

/// CIFAR-10 "quick" network: three 5x5 CONV layers with ReLU, then two FC.
inline NetworkModel cifar_quick(int bits, std::uint64_t seed = 1) {
  NetworkModel m;
  m.name = "cifarquick-" + std::to_string(bits);
  m.dataset = "cifar10";
  m.input_shape = {3, 32, 32};
  m.num_classes = 10;
  m.preprocess.scale = 1.0 / 255.0;
  m.preprocess.mean = {0.49, 0.48, 0.45};
  Rng rng(seed);
  detail::LayerBuilder b{m, rng, detail::act_spec(bits), detail::weight_spec(bits), detail::act_spec(bits), 3};
  b.conv("conv1", 32, 5, 2, true);
  b.pool("pool1", LayerKind::MaxPool, 3, 2, 1);
  b.conv("conv2", 32, 5, 2, true);
  b.pool("pool2", LayerKind::AvgPool, 3, 2, 1);
  b.conv("conv3", 64, 5, 2, true);
  b.pool("pool3", LayerKind::AvgPool, 3, 2, 1);
  b.fc("fc1", 1024, 64, false);
  b.fc("fc2", 64, 10, false);
  m.validate();
  return m;
}

inline NetworkModel benchmark_model(const std::string& name, int bits, std::uint64_t seed = 1) {
  if (name == "lenet5") return lenet5(bits, seed);
  if (name == "cifarquick") return cifar_quick(bits, seed);
  throw Error("unknown benchmark '" + name + "' (expected lenet5 or cifarquick)");
}

struct ToyModelOptions {
  int bits = 8;
  int size = 6;        // input height and width
  int channels = 2;    // input channels
  bool relu = true;    // ReLU after the CONV layer
  bool pool = false;   // max-pool after the CONV layer
};

/// Small CONV(+pool)+FC model for property tests.
inline NetworkModel toy_model(std::uint64_t seed, const ToyModelOptions& opt = {}) {
  NetworkModel m;
  m.name = "toy-" + std::to_string(seed);
  m.dataset = "toy";
  m.input_shape = {opt.channels, opt.size, opt.size};
  m.num_classes = 3;
  Rng rng(seed);
  detail::LayerBuilder b{m, rng, detail::act_spec(opt.bits), detail::weight_spec(opt.bits), detail::act_spec(opt.bits),
                         opt.channels};
  b.conv("conv", 4, 3, 1, opt.relu);
  int side = opt.size;
  if (opt.pool) {
    b.pool("pool", LayerKind::MaxPool, 2, 2, 0);
    side = (side - 2) / 2 + 1;
  }
  b.fc("fc", 4 * side * side, 3, false);
  m.validate();
  return m;
}

/// Uniformly random input in the model's input range.
inline QTensor random_input(const NetworkModel& m, Rng& rng) {
  const auto& s = m.input_spec();
  QTensor t = QTensor::zeros(m.input_shape.dims(), s);
  for (auto& v : t.data) v = static_cast<std::int32_t>(uniform_int(rng, s.min_value(), s.max_value()));
  return t;
}

/// Occupancy of a run whose CONV layers execute a fraction `1 - reduction` of
/// their iterations, spread evenly over MACs by error diffusion. FC layers run
/// every iteration without checks.
inline std::vector<LayerOccupancy> inject_reduction(const NetworkModel& m, double reduction) {
  if (!(reduction >= 0.0 && reduction < 1.0)) throw Error("reduction must lie in [0, 1)");
  auto occ = full_occupancy(m);
  for (auto& o : occ) {
    if (m.layers[o.layer].kind != LayerKind::Conv) continue;
    o.checked = true;
    const double mean = o.total_iterations * (1.0 - reduction);
    double carry = 0;
    for (auto& it : o.iterations) {
      const double want = mean + carry;
      const int k = std::clamp(static_cast<int>(std::lround(want)), 1, o.total_iterations);
      carry = want - k;
      it = static_cast<std::uint8_t>(k);
    }
  }
  return occ;
}

}  // namespace xbarsim

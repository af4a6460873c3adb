#pragma once

// CNN model description, model-directory IO and exact quantized inference.
//
// Model directory layout:
//   manifest.json   layer list, specs and tensor file names
//   <tensor>.bin    raw little-endian signed integers, row-major [z, c, h, w]

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbarsim/qcore.hpp"

namespace xbarsim {

enum class LayerKind { Conv, FC, MaxPool, AvgPool };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::FC: return "fc";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "fc") return LayerKind::FC;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "avgpool") return LayerKind::AvgPool;
  throw Error("unknown layer kind '" + s + "'");
}

struct Shape3 {
  int c = 0, h = 0, w = 0;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  std::vector<std::size_t> dims() const {
    return {static_cast<std::size_t>(c), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 1, kernel_w = 1;
  int in_channels = 0;  // flattened input length for FC
  int out_channels = 0;
  int stride = 1, padding = 0;
  bool has_relu = false;
  bool has_bias = false;
  FixedSpec input_spec, weight_spec, output_spec, bias_spec;
  QTensor weights;  // [z, c, h, w]; empty for pooling
  QTensor bias;     // [z]
  std::vector<std::int64_t> bias_accumulator;  // bias at accumulator scale, filled by validate

  bool is_compute() const { return kind == LayerKind::Conv || kind == LayerKind::FC; }
  bool is_pool() const { return !is_compute(); }
  std::size_t kernel_size() const {
    return static_cast<std::size_t>(in_channels) * kernel_h * kernel_w;
  }
  int accumulator_frac() const { return input_spec.frac_bits + weight_spec.frac_bits; }
  int requant_shift() const { return accumulator_frac() - output_spec.frac_bits; }
  std::span<const std::int32_t> kernel(int z) const {
    const auto k = kernel_size();
    return std::span<const std::int32_t>(weights.data).subspan(static_cast<std::size_t>(z) * k, k);
  }
};

struct Preprocess {
  double scale = 1.0;
  std::vector<double> mean;  // empty, per channel, or per pixel [c, h, w]
};

struct NetworkModel {
  std::string name;
  std::string dataset;  // "mnist", "cifar10" or free-form tag
  Shape3 input_shape;
  int num_classes = 0;
  Preprocess preprocess;
  std::vector<LayerDesc> layers;
  std::vector<Shape3> shapes;  // shapes[i] is the input of layer i; back() is the output

  const FixedSpec& input_spec() const { return layers.front().input_spec; }

  /// Checks every structural invariant, derives per-layer shapes and bias preloads.
  void validate();
};

namespace detail {

inline int pooled_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace detail

inline Shape3 output_shape(const LayerDesc& l, const Shape3& in) {
  switch (l.kind) {
    case LayerKind::FC: return {l.out_channels, 1, 1};
    case LayerKind::Conv:
      return {l.out_channels, detail::pooled_extent(in.h, l.kernel_h, l.stride, l.padding),
              detail::pooled_extent(in.w, l.kernel_w, l.stride, l.padding)};
    default:
      return {in.c, detail::pooled_extent(in.h, l.kernel_h, l.stride, l.padding),
              detail::pooled_extent(in.w, l.kernel_w, l.stride, l.padding)};
  }
}

inline void NetworkModel::validate() {
  if (layers.empty()) throw Error("model '" + name + "' has no layers");
  if (input_shape.size() == 0) throw Error("model input shape is empty");
  shapes.clear();
  Shape3 cur = input_shape;
  shapes.push_back(cur);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + l.name + "): ";
    try {
      l.input_spec.validate();
      l.output_spec.validate();
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    if (i > 0 && !(layers[i - 1].output_spec == l.input_spec))
      throw Error(where + "input spec differs from previous layer's output spec");
    if (l.stride < 1 || l.padding < 0 || l.kernel_h < 1 || l.kernel_w < 1)
      throw Error(where + "invalid kernel/stride/padding");
    if (l.is_compute()) {
      l.weight_spec.validate();
      if (l.kind == LayerKind::FC) {
        if (l.kernel_h != 1 || l.kernel_w != 1) throw Error(where + "fc layer must have a 1x1 kernel");
        if (static_cast<std::size_t>(l.in_channels) != cur.size())
          throw Error(where + "shape mismatch: fc expects " + std::to_string(l.in_channels) +
                      " inputs, got " + std::to_string(cur.size()));
      } else if (l.in_channels != cur.c) {
        throw Error(where + "shape mismatch: conv expects " + std::to_string(l.in_channels) +
                    " channels, got " + std::to_string(cur.c));
      }
      if (l.out_channels < 1) throw Error(where + "no output channels");
      const std::vector<std::size_t> wshape{static_cast<std::size_t>(l.out_channels),
                                            static_cast<std::size_t>(l.in_channels),
                                            static_cast<std::size_t>(l.kernel_h),
                                            static_cast<std::size_t>(l.kernel_w)};
      if (l.weights.shape != wshape || l.weights.data.size() != l.weights.element_count())
        throw Error(where + "shape mismatch in weight tensor");
      if (!(l.weights.spec == l.weight_spec)) throw Error(where + "weight tensor spec differs from layer");
      for (auto v : l.weights.data)
        if (!l.weight_spec.contains(v))
          throw Error(where + "weight out of range: " + std::to_string(v));
      l.bias_accumulator.assign(static_cast<std::size_t>(l.out_channels), 0);
      if (l.has_bias) {
        l.bias_spec.validate();
        if (l.bias.data.size() != static_cast<std::size_t>(l.out_channels))
          throw Error(where + "shape mismatch in bias tensor");
        for (std::size_t z = 0; z < l.bias.data.size(); ++z) {
          const auto b = l.bias.data[z];
          if (!l.bias_spec.contains(b)) throw Error(where + "bias out of range: " + std::to_string(b));
          l.bias_accumulator[z] = shift_round_half_even(b, l.bias_spec.frac_bits - l.accumulator_frac());
        }
      }
    } else {
      if (!(l.input_spec == l.output_spec)) throw Error(where + "pooling must keep the activation spec");
      if (l.in_channels == 0) l.in_channels = cur.c;
      if (l.out_channels == 0) l.out_channels = cur.c;
      if (l.in_channels != cur.c || l.out_channels != cur.c)
        throw Error(where + "shape mismatch: pooling channel count");
      if (l.padding >= std::max(l.kernel_h, l.kernel_w))
        throw Error(where + "pooling padding must be smaller than the window");
    }
    cur = output_shape(l, cur);
    if (cur.h < 1 || cur.w < 1) throw Error(where + "shape mismatch: output is empty");
    shapes.push_back(cur);
  }
  if (static_cast<int>(cur.size()) != num_classes)
    throw Error("model output size " + std::to_string(cur.size()) + " differs from class count " +
                std::to_string(num_classes));
  if (!preprocess.mean.empty() && preprocess.mean.size() != static_cast<std::size_t>(input_shape.c) &&
      preprocess.mean.size() != input_shape.size())
    throw Error("preprocess mean must be per channel or per pixel");
}

/// True when every input reaching layer `i` is known to be non-negative:
/// an unsigned input spec, or a ReLU-terminated producer behind any pooling.
inline bool inputs_nonnegative(const NetworkModel& m, std::size_t i) {
  if (!m.layers[i].input_spec.is_signed) return true;
  for (std::size_t k = i; k-- > 0;) {
    const auto& p = m.layers[k];
    if (p.is_compute()) return p.has_relu;
    if (!p.input_spec.is_signed) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Model directory IO

namespace detail {

inline nlohmann::json spec_to_json(const FixedSpec& s) {
  return {{"bits", s.bit_width}, {"frac", s.frac_bits}, {"signed", s.is_signed}};
}

inline FixedSpec spec_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw Error("manifest: missing spec '" + what + "'");
  FixedSpec s;
  s.bit_width = j.at("bits").get<int>();
  s.frac_bits = j.at("frac").get<int>();
  s.is_signed = j.value("signed", true);
  return s;
}

inline int dtype_bytes(const std::string& dtype) {
  if (dtype == "int8") return 1;
  if (dtype == "int16") return 2;
  if (dtype == "int32") return 4;
  throw Error("unknown tensor dtype '" + dtype + "'");
}

inline std::string default_dtype(const FixedSpec& s) { return s.bit_width <= 8 ? "int8" : "int16"; }

inline std::vector<std::int32_t> read_tensor_file(const std::filesystem::path& p, std::size_t count,
                                                  int bytes) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("missing tensor file: " + p.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() != count * static_cast<std::size_t>(bytes))
    throw Error("shape mismatch: tensor file " + p.filename().string() + " holds " +
                std::to_string(raw.size()) + " bytes, expected " +
                std::to_string(count * static_cast<std::size_t>(bytes)));
  std::vector<std::int32_t> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint32_t u = 0;
    for (int b = 0; b < bytes; ++b) u |= static_cast<std::uint32_t>(raw[k * bytes + b]) << (8 * b);
    if (bytes == 1) out[k] = static_cast<std::int8_t>(u);
    else if (bytes == 2) out[k] = static_cast<std::int16_t>(u);
    else out[k] = static_cast<std::int32_t>(u);
  }
  return out;
}

inline void write_tensor_file(const std::filesystem::path& p, std::span<const std::int32_t> values,
                              int bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  for (auto v : values) {
    const auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < bytes; ++b) out.put(static_cast<char>((u >> (8 * b)) & 0xFFu));
  }
}

}  // namespace detail

inline NetworkModel load_model(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error("missing manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }

  NetworkModel m;
  try {
    m.name = j.value("name", dir.filename().string());
    m.dataset = j.value("dataset", "");
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw Error("input_shape must be [c, h, w]");
    m.input_shape = {shape[0], shape[1], shape[2]};
    m.num_classes = j.at("num_classes").get<int>();
    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      m.preprocess.scale = p.value("scale", 1.0);
      m.preprocess.mean = p.value("mean", std::vector<double>{});
    }
    for (const auto& lj : j.at("layers")) {
      LayerDesc l;
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      l.name = lj.value("name", to_string(l.kind));
      if (lj.contains("kernel")) {
        const auto k = lj["kernel"].get<std::vector<int>>();
        if (k.size() != 2) throw Error("layer " + l.name + ": kernel must be [h, w]");
        l.kernel_h = k[0];
        l.kernel_w = k[1];
      }
      l.in_channels = lj.value("in_channels", 0);
      l.out_channels = lj.value("out_channels", 0);
      l.stride = lj.value("stride", 1);
      l.padding = lj.value("padding", 0);
      l.has_relu = lj.value("has_relu", false);
      l.has_bias = lj.value("has_bias", false);
      l.input_spec = detail::spec_from_json(lj.value("input_spec", nlohmann::json{}), "input_spec");
      l.output_spec = detail::spec_from_json(lj.value("output_spec", nlohmann::json{}), "output_spec");
      if (l.is_compute()) {
        l.weight_spec = detail::spec_from_json(lj.value("weight_spec", nlohmann::json{}), "weight_spec");
        l.weight_spec.validate();
        const std::vector<std::size_t> wshape{static_cast<std::size_t>(l.out_channels),
                                              static_cast<std::size_t>(l.in_channels),
                                              static_cast<std::size_t>(l.kernel_h),
                                              static_cast<std::size_t>(l.kernel_w)};
        l.weights.shape = wshape;
        l.weights.spec = l.weight_spec;
        const auto wdtype = lj.value("weights_dtype", detail::default_dtype(l.weight_spec));
        l.weights.data = detail::read_tensor_file(dir / lj.at("weights").get<std::string>(),
                                                  l.weights.element_count(), detail::dtype_bytes(wdtype));
        if (l.has_bias) {
          l.bias_spec = detail::spec_from_json(lj.value("bias_spec", nlohmann::json{}), "bias_spec");
          l.bias_spec.validate();
          l.bias.shape = {static_cast<std::size_t>(l.out_channels)};
          l.bias.spec = l.bias_spec;
          const auto bdtype = lj.value("bias_dtype", detail::default_dtype(l.bias_spec));
          l.bias.data = detail::read_tensor_file(dir / lj.at("bias").get<std::string>(),
                                                 l.bias.element_count(), detail::dtype_bytes(bdtype));
        }
      }
      m.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  m.validate();
  return m;
}

inline void save_model(const NetworkModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["dataset"] = m.dataset;
  j["input_shape"] = {m.input_shape.c, m.input_shape.h, m.input_shape.w};
  j["num_classes"] = m.num_classes;
  j["preprocess"] = {{"scale", m.preprocess.scale}, {"mean", m.preprocess.mean}};
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : m.layers) {
    nlohmann::ordered_json lj;
    lj["name"] = l.name;
    lj["kind"] = to_string(l.kind);
    lj["kernel"] = {l.kernel_h, l.kernel_w};
    lj["in_channels"] = l.in_channels;
    lj["out_channels"] = l.out_channels;
    lj["stride"] = l.stride;
    lj["padding"] = l.padding;
    lj["has_relu"] = l.has_relu;
    lj["has_bias"] = l.has_bias;
    lj["input_spec"] = detail::spec_to_json(l.input_spec);
    lj["output_spec"] = detail::spec_to_json(l.output_spec);
    if (l.is_compute()) {
      lj["weight_spec"] = detail::spec_to_json(l.weight_spec);
      lj["weights"] = l.name + "_w.bin";
      detail::write_tensor_file(dir / (l.name + "_w.bin"), l.weights.data,
                                detail::dtype_bytes(detail::default_dtype(l.weight_spec)));
      if (l.has_bias) {
        lj["bias_spec"] = detail::spec_to_json(l.bias_spec);
        lj["bias"] = l.name + "_b.bin";
        detail::write_tensor_file(dir / (l.name + "_b.bin"), l.bias.data,
                                  detail::dtype_bytes(detail::default_dtype(l.bias_spec)));
      }
    }
    layers.push_back(std::move(lj));
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
}

/// Re-expresses every tensor and spec of `m` at `bits`, dropping the
/// lowest-order fraction bits first (round-half-to-even, saturating).
inline NetworkModel requantize_model(const NetworkModel& m, int bits) {
  if (bits < 2 || bits > kMaxBits) throw Error("bit width override outside [2, 16]");
  NetworkModel out = m;
  auto respec = [bits](const FixedSpec& s) {
    FixedSpec r = s;
    r.frac_bits = std::max(0, s.frac_bits - (s.bit_width - bits));
    r.bit_width = bits;
    if (r.frac_bits >= bits) r.frac_bits = bits - 1;
    return r;
  };
  auto retensor = [&](QTensor& t, const FixedSpec& to) {
    for (auto& v : t.data)
      v = static_cast<std::int32_t>(saturate(shift_round_half_even(v, t.spec.frac_bits - to.frac_bits), to));
    t.spec = to;
  };
  for (auto& l : out.layers) {
    l.input_spec = respec(l.input_spec);
    l.output_spec = respec(l.output_spec);
    if (l.is_compute()) {
      l.weight_spec = respec(l.weight_spec);
      retensor(l.weights, l.weight_spec);
      if (l.has_bias) {
        l.bias_spec = respec(l.bias_spec);
        retensor(l.bias, l.bias_spec);
      }
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Inference dataflow

inline std::int32_t finish_mac(const LayerDesc& l, std::int64_t acc) {
  std::int32_t v = requantize(acc, l.requant_shift(), l.output_spec);
  if (l.has_relu && v < 0) v = 0;
  return v;
}

struct InferenceResult {
  std::vector<std::int32_t> logits;
  std::vector<QTensor> activations;  // output of each layer
};

namespace detail {

inline QTensor pool_layer(const LayerDesc& l, const QTensor& in, const Shape3& is, const Shape3& os) {
  QTensor out = QTensor::zeros(os.dims(), l.output_spec);
  for (int c = 0; c < os.c; ++c)
    for (int oy = 0; oy < os.h; ++oy)
      for (int ox = 0; ox < os.w; ++ox) {
        std::int64_t best = 0, sum = 0, count = 0;
        bool first = true;
        for (int ky = 0; ky < l.kernel_h; ++ky)
          for (int kx = 0; kx < l.kernel_w; ++kx) {
            const int y = oy * l.stride - l.padding + ky;
            const int x = ox * l.stride - l.padding + kx;
            if (y < 0 || y >= is.h || x < 0 || x >= is.w) continue;
            const std::int64_t v = in.data[(static_cast<std::size_t>(c) * is.h + y) * is.w + x];
            if (first || v > best) best = v;
            first = false;
            sum += v;
            ++count;
          }
        const std::int64_t r = l.kind == LayerKind::MaxPool ? best : divide_round_half_even(sum, count);
        out.data[(static_cast<std::size_t>(c) * os.h + oy) * os.w + ox] = static_cast<std::int32_t>(r);
      }
  return out;
}

}  // namespace detail

/// Runs the layer sequence of `m` on `input`, delegating every CONV/FC output
/// activation to `mac(layer, position, channel, window, kernel, bias_preload)`,
/// which returns the final (requantized, rectified) output value.
template <class MacFn>
InferenceResult run_network(const NetworkModel& m, const QTensor& input, MacFn&& mac,
                            bool keep_activations = true) {
  if (input.data.size() != m.input_shape.size()) throw Error("input does not match model input shape");
  InferenceResult res;
  QTensor cur = input;
  std::vector<std::int32_t> window;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& l = m.layers[li];
    const Shape3& is = m.shapes[li];
    const Shape3& os = m.shapes[li + 1];
    QTensor next;
    if (l.kind == LayerKind::FC) {
      next = QTensor::zeros(os.dims(), l.output_spec);
      for (int z = 0; z < l.out_channels; ++z)
        next.data[static_cast<std::size_t>(z)] =
            mac(li, std::size_t{0}, z, std::span<const std::int32_t>(cur.data), l.kernel(z),
                l.bias_accumulator[static_cast<std::size_t>(z)]);
    } else if (l.kind == LayerKind::Conv) {
      next = QTensor::zeros(os.dims(), l.output_spec);
      window.assign(l.kernel_size(), 0);
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          std::size_t k = 0;
          for (int c = 0; c < l.in_channels; ++c)
            for (int ky = 0; ky < l.kernel_h; ++ky)
              for (int kx = 0; kx < l.kernel_w; ++kx, ++k) {
                const int y = oy * l.stride - l.padding + ky;
                const int x = ox * l.stride - l.padding + kx;
                window[k] = (y < 0 || y >= is.h || x < 0 || x >= is.w)
                                ? 0
                                : cur.data[(static_cast<std::size_t>(c) * is.h + y) * is.w + x];
              }
          const std::size_t pos = static_cast<std::size_t>(oy) * os.w + ox;
          for (int z = 0; z < l.out_channels; ++z)
            next.data[static_cast<std::size_t>(z) * os.h * os.w + pos] =
                mac(li, pos, z, std::span<const std::int32_t>(window), l.kernel(z),
                    l.bias_accumulator[static_cast<std::size_t>(z)]);
        }
    } else {
      next = detail::pool_layer(l, cur, is, os);
    }
    if (keep_activations) res.activations.push_back(next);
    cur = std::move(next);
  }
  res.logits = std::move(cur.data);
  return res;
}

inline InferenceResult infer_exact(const NetworkModel& m, const QTensor& input,
                                   bool keep_activations = true) {
  return run_network(
      m, input,
      [&m](std::size_t li, std::size_t, int, std::span<const std::int32_t> a,
           std::span<const std::int32_t> w, std::int64_t bias) {
        return finish_mac(m.layers[li], bias + dot_exact(a, w).value);
      },
      keep_activations);
}

inline std::size_t argmax(std::span<const std::int32_t> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace xbarsim

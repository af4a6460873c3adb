#pragma once

// Shared helpers and reference implementations that do not reuse library code.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "xbarsim/xbarsim.hpp"

namespace testing_support {

inline std::filesystem::path fixtures() { return XBARSIM_FIXTURES; }
inline std::filesystem::path toy_model_dir() { return fixtures() / "toy_model"; }
inline std::string toy_dataset() {
  return "mnist:" + (fixtures() / "toy-images.idx3-ubyte").string() + "," +
         (fixtures() / "toy-labels.idx1-ubyte").string();
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("xbarsim-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// acc * 2^-shift, ties to even, computed in long double.
inline std::int64_t ref_requantize(std::int64_t acc, int shift, const xbarsim::FixedSpec& out) {
  const long double v = std::ldexp(static_cast<long double>(acc), -shift);
  const long double lo = std::floor(v);
  const long double frac = v - lo;
  long double r = frac > 0.5L ? lo + 1 : frac < 0.5L ? lo : (std::fmod(lo, 2.0L) == 0 ? lo : lo + 1);
  const long double hi = static_cast<long double>(out.max_value());
  const long double mn = static_cast<long double>(out.min_value());
  if (r > hi) r = hi;
  if (r < mn) r = mn;
  return static_cast<std::int64_t>(r);
}

// Scalar reference inference: direct loops over output, channel and kernel
// indices with zero padding, pooling over valid elements only.
inline std::vector<std::int64_t> ref_infer(const xbarsim::NetworkModel& m, const std::vector<std::int32_t>& input) {
  std::vector<std::int64_t> cur(input.begin(), input.end());
  int C = m.input_shape.c, H = m.input_shape.h, W = m.input_shape.w;
  for (const auto& l : m.layers) {
    std::vector<std::int64_t> next;
    const int shift = l.input_spec.frac_bits + l.weight_spec.frac_bits - l.output_spec.frac_bits;
    auto bias_acc = [&](int z) -> std::int64_t {
      if (!l.has_bias) return 0;
      const int d = l.input_spec.frac_bits + l.weight_spec.frac_bits - l.bias_spec.frac_bits;
      return d >= 0 ? static_cast<std::int64_t>(l.bias.data[z]) * (std::int64_t{1} << d)
                    : ref_requantize(l.bias.data[z], -d, {32, 0, true});
    };
    auto finish = [&](std::int64_t acc) {
      std::int64_t v = ref_requantize(acc, shift, l.output_spec);
      return l.has_relu && v < 0 ? 0 : v;
    };
    if (l.kind == xbarsim::LayerKind::FC) {
      const int n = C * H * W;
      for (int z = 0; z < l.out_channels; ++z) {
        std::int64_t acc = bias_acc(z);
        for (int k = 0; k < n; ++k) acc += cur[k] * l.weights.data[static_cast<std::size_t>(z) * n + k];
        next.push_back(finish(acc));
      }
      C = l.out_channels;
      H = W = 1;
    } else {
      const int K = l.kernel_h, S = l.stride, P = l.padding;
      const int OH = (H + 2 * P - K) / S + 1, OW = (W + 2 * P - l.kernel_w) / S + 1;
      const int OC = l.kind == xbarsim::LayerKind::Conv ? l.out_channels : C;
      next.assign(static_cast<std::size_t>(OC) * OH * OW, 0);
      for (int z = 0; z < OC; ++z)
        for (int y = 0; y < OH; ++y)
          for (int x = 0; x < OW; ++x) {
            std::int64_t acc = 0, best = INT64_MIN, count = 0;
            if (l.kind == xbarsim::LayerKind::Conv) acc = bias_acc(z);
            for (int c = 0; c < (l.kind == xbarsim::LayerKind::Conv ? C : 1); ++c)
              for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < l.kernel_w; ++kx) {
                  const int iy = y * S - P + ky, ix = x * S - P + kx;
                  const bool inside = iy >= 0 && iy < H && ix >= 0 && ix < W;
                  if (l.kind == xbarsim::LayerKind::Conv) {
                    if (!inside) continue;
                    const std::int64_t a = cur[(static_cast<std::size_t>(c) * H + iy) * W + ix];
                    acc += a * l.weights.data[((static_cast<std::size_t>(z) * C + c) * K + ky) * l.kernel_w + kx];
                  } else if (inside) {
                    const std::int64_t a = cur[(static_cast<std::size_t>(z) * H + iy) * W + ix];
                    best = std::max(best, a);
                    acc += a;
                    ++count;
                  }
                }
            std::int64_t out;
            if (l.kind == xbarsim::LayerKind::Conv) out = finish(acc);
            else if (l.kind == xbarsim::LayerKind::MaxPool) out = best;
            else out = std::llrint(static_cast<long double>(acc) / count);
            next[(static_cast<std::size_t>(z) * OH + y) * OW + x] = out;
          }
      C = OC;
      H = OH;
      W = OW;
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace testing_support

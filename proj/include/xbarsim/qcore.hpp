#pragma once

// Fixed-point representation, sign-magnitude bit slicing and the exact
// integer dot product every bit-serial path is checked against.

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xbarsim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMaxBits = 16;

/// Bit width, binary point and signedness of an integer tensor.
/// Signed values use a symmetric sign-magnitude range, so -2^(N-1) is excluded.
struct FixedSpec {
  int bit_width = 16;
  int frac_bits = 0;
  bool is_signed = true;

  constexpr std::int64_t max_value() const {
    return is_signed ? (std::int64_t{1} << (bit_width - 1)) - 1
                     : (std::int64_t{1} << bit_width) - 1;
  }
  constexpr std::int64_t min_value() const { return is_signed ? -max_value() : 0; }
  constexpr bool contains(std::int64_t v) const { return v >= min_value() && v <= max_value(); }

  void validate() const {
    if (bit_width < 2 || bit_width > kMaxBits)
      throw Error("bit width " + std::to_string(bit_width) + " outside [2, 16]");
    if (frac_bits < 0 || frac_bits >= bit_width)
      throw Error("fraction bits " + std::to_string(frac_bits) + " outside [0, bit width)");
  }

  friend constexpr bool operator==(const FixedSpec&, const FixedSpec&) = default;
};

struct QTensor {
  std::vector<std::size_t> shape;
  FixedSpec spec;
  std::vector<std::int32_t> data;

  static QTensor zeros(std::vector<std::size_t> shape, FixedSpec spec) {
    QTensor t{std::move(shape), spec, {}};
    t.data.assign(t.element_count(), 0);
    return t;
  }

  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  std::size_t size() const { return data.size(); }

  void validate() const {
    spec.validate();
    if (data.size() != element_count())
      throw Error("tensor has " + std::to_string(data.size()) + " elements, shape needs " +
                  std::to_string(element_count()));
    for (auto v : data)
      if (!spec.contains(v)) throw Error("tensor value " + std::to_string(v) + " out of range");
  }
};

/// Accumulator for one MAC. 2*16 + 16 bits of headroom fit in 64.
struct WideAccumulator {
  std::int64_t value = 0;
  friend constexpr auto operator<=>(const WideAccumulator&, const WideAccumulator&) = default;
};

inline std::int64_t saturate(std::int64_t v, const FixedSpec& spec) {
  if (v > spec.max_value()) return spec.max_value();
  if (v < spec.min_value()) return spec.min_value();
  return v;
}

// Round-half-to-even quantization with saturation. Relies on the default
// FE_TONEAREST rounding mode for std::nearbyint.
inline std::int32_t quantize_value(double v, const FixedSpec& spec) {
  const double scaled = std::ldexp(v, spec.frac_bits);
  const double hi = static_cast<double>(spec.max_value());
  const double lo = static_cast<double>(spec.min_value());
  if (!(scaled < hi)) return static_cast<std::int32_t>(spec.max_value());
  if (!(scaled > lo)) return static_cast<std::int32_t>(spec.min_value());
  return static_cast<std::int32_t>(saturate(static_cast<std::int64_t>(std::nearbyint(scaled)), spec));
}

inline QTensor quantize(std::span<const double> values, const FixedSpec& spec,
                        std::vector<std::size_t> shape = {}) {
  spec.validate();
  if (shape.empty()) shape = {values.size()};
  QTensor t{std::move(shape), spec, {}};
  if (t.element_count() != values.size()) throw Error("quantize: shape does not match value count");
  t.data.reserve(values.size());
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("quantize: non-finite input");
    t.data.push_back(quantize_value(v, spec));
  }
  return t;
}

inline double dequantize_value(std::int64_t q, const FixedSpec& spec) {
  return std::ldexp(static_cast<double>(q), -spec.frac_bits);
}

inline std::vector<double> dequantize(const QTensor& t) {
  std::vector<double> out;
  out.reserve(t.data.size());
  for (auto q : t.data) out.push_back(dequantize_value(q, t.spec));
  return out;
}

/// Sign-magnitude digit of `value` at bit `position`: sign(value) * bit(|value|).
inline int digit_at(std::int64_t value, int position, const FixedSpec& spec) {
  if (position < 0 || position >= spec.bit_width)
    throw Error("digit position " + std::to_string(position) + " out of range");
  if (!spec.contains(value)) throw Error("value " + std::to_string(value) + " outside spec range");
  const std::uint64_t mag = static_cast<std::uint64_t>(value < 0 ? -value : value);
  if (((mag >> position) & 1u) == 0) return 0;
  return value < 0 ? -1 : 1;
}

inline WideAccumulator dot_exact(std::span<const std::int32_t> activations,
                                 std::span<const std::int32_t> weights) {
  if (activations.size() != weights.size())
    throw Error("dot_exact: length mismatch (" + std::to_string(activations.size()) + " vs " +
                std::to_string(weights.size()) + ")");
  std::int64_t acc = 0;
  for (std::size_t j = 0; j < activations.size(); ++j)
    acc += static_cast<std::int64_t>(activations[j]) * weights[j];
  return {acc};
}

// Arithmetic shift by `shift` bits (right when positive) with round-half-to-even.
inline std::int64_t shift_round_half_even(std::int64_t v, int shift) {
  if (shift <= 0) return v * (std::int64_t{1} << -shift);
  const std::int64_t div = std::int64_t{1} << shift;
  std::int64_t q = v >> shift;  // floor
  const std::int64_t r = v - q * div;
  const std::int64_t half = div >> 1;
  if (r > half || (r == half && (q & 1) != 0)) ++q;
  return q;
}

// Integer division rounding half to even; divisor > 0.
inline std::int64_t divide_round_half_even(std::int64_t num, std::int64_t div) {
  std::int64_t q = num / div;
  std::int64_t r = num % div;
  if (r < 0) {
    --q;
    r += div;
  }
  if (2 * r > div || (2 * r == div && (q & 1) != 0)) ++q;
  return q;
}

inline std::int32_t requantize(std::int64_t acc, int shift, const FixedSpec& out) {
  if (shift < 0) {
    // Left shift could overflow for absurd specs; saturate early.
    const std::int64_t limit = out.max_value() >> -shift;
    if (acc > limit) return static_cast<std::int32_t>(out.max_value());
    if (acc < -limit) return static_cast<std::int32_t>(out.min_value());
  }
  return static_cast<std::int32_t>(saturate(shift_round_half_even(acc, shift), out));
}

}  // namespace xbarsim

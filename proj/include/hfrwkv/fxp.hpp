#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfrwkv/status.hpp"

// Signed fixed-point scalars and vectors with explicit widths.
//
// A Value is raw * 2^-frac_bits. A Vec additionally carries a per-tensor
// power-of-two exponent: element i is raw[i] * 2^(scale_exp - frac_bits).

namespace hfrwkv::fx {

struct Format {
  int total_bits = 16;
  int frac_bits = 8;
  // Symmetric formats never produce the most negative code (e.g. the 9-bit
  // activation format clamps to [-255, 255]).
  bool symmetric = false;

  constexpr int32_t max_raw() const { return static_cast<int32_t>((int64_t{1} << (total_bits - 1)) - 1); }
  constexpr int32_t min_raw() const { return symmetric ? -max_raw() : -max_raw() - 1; }
  constexpr bool contains(int64_t raw) const { return raw >= min_raw() && raw <= max_raw(); }

  void validate() const;

  friend constexpr bool operator==(const Format&, const Format&) = default;
};

/// 9-bit symmetric activation format, raw codes in [-255, 255].
inline constexpr Format kAct9{9, 8, true};
/// 16-bit internal datapath format used by the accumulators.
inline constexpr Format kInt16{16, 8, false};
/// Input format of the exp/sigmoid unit: Q5.11, domain [-16, 16).
inline constexpr Format kUnitIn{16, 11, false};
/// Probability/decay format: Q2.14, holds [0, 1] exactly.
inline constexpr Format kProb{16, 14, false};
/// Log-domain format for the WKV exponent bookkeeping: Q7.9.
inline constexpr Format kLog{16, 9, false};

enum class Rounding {
  kNearestEven,
  kFloor,
  kTowardZero,
};

struct Value {
  int32_t raw = 0;
  Format fmt{};

  double real() const;
  friend bool operator==(const Value&, const Value&) = default;
};

struct Vec {
  std::vector<int32_t> elems;
  Format fmt{};
  int scale_exp = 0;

  size_t size() const { return elems.size(); }
  /// Exponent of one raw unit: value = raw * 2^unit_exp().
  int unit_exp() const { return scale_exp - fmt.frac_bits; }
  double real(size_t i) const;
  std::vector<double> to_real() const;
  Value at(size_t i) const { return Value{elems[i], fmt}; }

  friend bool operator==(const Vec&, const Vec&) = default;
};

/// Clamps to fmt; raises kSaturated when clamping happened and flags is set.
int32_t saturate(int64_t v, const Format& fmt, StatusFlags* flags = nullptr);

/// Arithmetic right shift by s >= 0 with the given rounding.
int64_t shift_right_round(int64_t v, int s, Rounding mode);

/// Saturating add in the shared format.
Value add(const Value& a, const Value& b, StatusFlags* flags = nullptr);

/// Barrel shift of the raw code: left saturates, right floors.
Value shift(const Value& a, int s, StatusFlags* flags = nullptr);

/// Re-expresses a in target (frac-bit change), rounding then saturating.
Value requantize(const Value& a, const Format& target, Rounding mode = Rounding::kNearestEven,
                 StatusFlags* flags = nullptr);

/// Quantizes a real value into fmt (round-to-nearest-even, saturate).
Value from_real(double x, const Format& fmt, StatusFlags* flags = nullptr);

/// Block-floating-point normalization. Takes wide raw codes sharing the
/// unit exponent `unit_exp` and returns a Vec in `target` whose scale_exp is
/// the smallest exponent for which every element fits without saturation.
Vec normalize(std::span<const int64_t> wide, int unit_exp, const Format& target);
Vec normalize(const Vec& v, const Format& target);

/// Re-expresses v with a fixed unit exponent in target (rounding, saturating).
Vec rescale(const Vec& v, const Format& target, int scale_exp, Rounding mode = Rounding::kNearestEven,
            StatusFlags* flags = nullptr);

/// Quantizes reals into a block-floating-point Vec of format target.
Vec quantize_block(std::span<const double> x, const Format& target);

}  // namespace hfrwkv::fx

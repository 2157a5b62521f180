#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hfrwkv/fxp.hpp"
#include "hfrwkv/quant.hpp"
#include "hfrwkv/status.hpp"

// Behavioral models of the function units: the Delta-PoT shift-add
// multiplier (PMAC), the leading-one detector, the LUT divider and the shared
// exponential/sigmoid unit.

namespace hfrwkv::units {

// ---------------------------------------------------------------------------
// PMAC

/// Extra fraction bits of a standalone PMAC product over the activation
/// format. 255 * 2^7 * level stays below 2^15 for every level < 1.
inline constexpr int kPmacProductShift = 7;

/// Signed product raw code: trunc(|act| * level * 2^shift) with the sign of
/// act*w, saturated to 16-bit symmetric. Terms are summed exactly in a wide
/// adder and truncated once.
int32_t pmac_raw(int32_t act_raw, const quant::DeltaPotCode& w, const quant::DeltaPotConfig& cfg, int shift,
                 StatusFlags* flags = nullptr);

/// 9-bit activation times Delta-PoT weight. The result is in
/// {16, act.frac + kPmacProductShift} and represents act * unit_level(w); the
/// 2*gamma factor is carried by the caller.
fx::Value pmac_mul(const fx::Value& act, const quant::DeltaPotCode& w, const quant::DeltaPotConfig& cfg,
                   StatusFlags* flags = nullptr);

// ---------------------------------------------------------------------------
// Leading-one detector

/// Hierarchical binary search for the most significant set bit of the low
/// `width` bits of x. Returns -1 when none is set. width must be a power of
/// two in [1, 32].
int lod(uint32_t x, int width = 16);

// ---------------------------------------------------------------------------
// Divider

/// 16x16 table of x/y quotients, 8 fraction bits, indexed by the four bits
/// after the leading one of each operand.
class DivLut {
 public:
  static constexpr int kSide = 16;
  static constexpr int kFracBits = 8;

  /// Midpoint construction with an exact diagonal.
  static DivLut midpoint();
  static DivLut from_entries(std::span<const uint16_t> entries);

  uint16_t at(int row, int col) const { return e_[static_cast<size_t>(row * kSide + col)]; }
  std::span<const uint16_t> entries() const { return e_; }

 private:
  std::array<uint16_t, kSide * kSide> e_{};
};

/// Quotient before denormalization: value = mantissa * 2^(shift - 8).
struct Quotient {
  uint32_t mantissa = 0;
  int shift = 0;
  bool div_by_zero = false;

  double value() const;
  /// floor(value * 2^frac_bits), saturated to `max_raw`.
  uint32_t to_raw(int frac_bits, uint32_t max_raw, StatusFlags* flags = nullptr) const;
};

/// Four-bit index following the leading one at position k (zero padded).
int mantissa_index(uint32_t x, int k);

Quotient divu_parts(uint32_t dividend, uint32_t divisor, const DivLut& lut, StatusFlags* flags = nullptr);

/// 16-bit unsigned quotient with 8 fraction bits. divisor == 0 saturates to
/// 0xFFFF and raises kDivByZero.
uint16_t divu(uint16_t dividend, uint16_t divisor, const DivLut& lut, StatusFlags* flags = nullptr);

/// Sign-separated division of two 16-bit magnitude operands. The result is
/// expressed in `out` (truncated toward zero, saturated).
fx::Value signed_div(const fx::Value& a, const fx::Value& b, const fx::Format& out, const DivLut& lut,
                     StatusFlags* flags = nullptr);

// ---------------------------------------------------------------------------
// Exponential / sigmoid unit

/// 2^v for v in [0, 1), 256 entries with 8 fraction bits. Entry i holds the
/// bucket midpoint 2^((i + 0.5) / 256), except entry 0 which is exactly 1.
class ExpLut {
 public:
  static constexpr int kSize = 256;
  static ExpLut midpoint();
  static ExpLut from_entries(std::span<const uint16_t> entries);

  uint16_t at(int i) const { return e_[static_cast<size_t>(i)]; }
  std::span<const uint16_t> entries() const { return e_; }

 private:
  std::array<uint16_t, kSize> e_{};
};

/// One positive-domain segment: for |x| >= threshold,
/// f = |x| * 2^-slope_shift + intercept (slope_shift < 0 means constant).
struct SigmaSegment {
  int32_t threshold_raw = 0;  // kUnitIn
  int slope_shift = -1;
  int32_t intercept_raw = 0;  // kProb

  friend bool operator==(const SigmaSegment&, const SigmaSegment&) = default;
};

class SigmaLut {
 public:
  static constexpr int kRows = 4;
  /// Segments 1 | x/32 + 27/32 | x/8 + 5/8 | x/4 + 1/2 at 5, 2.375, 1, 0.
  static SigmaLut standard();
  static SigmaLut from_entries(std::span<const uint16_t> entries);

  std::span<const SigmaSegment> segments() const { return rows_; }
  std::vector<uint16_t> entries() const;

 private:
  std::array<SigmaSegment, kRows> rows_{};
};

enum class ExpSigmaMode { kExp = 0, kSigmoid = 1 };

/// exp result before the final shift: value = mantissa * 2^(exponent - 8).
struct ExpParts {
  uint16_t mantissa = 0;
  int exponent = 0;
  bool overflow = false;

  double value() const;
};

/// Y = x + (x >> 1) - (x >> 4), i.e. x * 1.0111b, saturating.
fx::Value shift_addition_log2e(const fx::Value& x, StatusFlags* flags = nullptr);

class ExpSigmaUnit {
 public:
  /// Inputs at or above this value overflow in exp mode.
  static constexpr double kExpUpper = 8.0;

  ExpSigmaUnit() : ExpSigmaUnit(ExpLut::midpoint(), SigmaLut::standard()) {}
  ExpSigmaUnit(ExpLut exp_lut, SigmaLut sigma_lut) : exp_lut_(exp_lut), sigma_lut_(sigma_lut) {}

  const ExpLut& exp_lut() const { return exp_lut_; }
  const SigmaLut& sigma_lut() const { return sigma_lut_; }

  /// x must be in kUnitIn.
  ExpParts exp_parts(const fx::Value& x, StatusFlags* flags = nullptr) const;
  fx::Value exp(const fx::Value& x, const fx::Format& out, StatusFlags* flags = nullptr) const;
  /// Piecewise-linear sigmoid in kProb; f(x) + f(-x) == 1.0 exactly.
  fx::Value sigmoid(const fx::Value& x) const;

 private:
  ExpLut exp_lut_;
  SigmaLut sigma_lut_;
};

/// Mode-selected evaluation. Exp results are written in `exp_out`; sigmoid
/// results are always kProb.
fx::Value exp_sigma(const fx::Value& x, ExpSigmaMode mode, const ExpSigmaUnit& unit,
                    const fx::Format& exp_out = fx::kProb, StatusFlags* flags = nullptr);

// ---------------------------------------------------------------------------
// LUT image files: "HLUT" magic, kind, version, entry count (LE), then
// little-endian 16-bit entries.

enum class LutKind : uint8_t { kDiv = 1, kExp = 2, kSigma = 3 };

struct LutImage {
  LutKind kind = LutKind::kDiv;
  std::vector<uint16_t> entries;
};

std::vector<uint8_t> dump_lut(LutKind kind, std::span<const uint16_t> entries);
/// Throws std::runtime_error on malformed images.
LutImage load_lut(std::span<const uint8_t> bytes);

}  // namespace hfrwkv::units

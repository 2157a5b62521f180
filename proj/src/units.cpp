#include "hfrwkv/units.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace hfrwkv::units {

// ---------------------------------------------------------------------------
// PMAC

int32_t pmac_raw(int32_t act_raw, const quant::DeltaPotCode& w, const quant::DeltaPotConfig& cfg, int shift,
                 StatusFlags* flags) {
  std::array<int, quant::kMaxTerms> q{};
  const int n = quant::active_exponents(w, cfg, q);
  if (n == 0 || act_raw == 0) return 0;

  const int64_t mag = std::llabs(act_raw);
  const int base = q[static_cast<size_t>(n - 1)];
  // Barrel-shifted terms aligned to the finest exponent, summed exactly.
  int64_t sum = 0;
  for (int i = 0; i < n; ++i) sum += mag << (base - q[static_cast<size_t>(i)]);

  const int s = shift - base;
  int64_t out = s >= 0 ? sum << s : sum >> (-s);
  constexpr int64_t kMax = 32767;
  if (out > kMax) {
    if (flags) flags->raise(Flag::kSaturated);
    out = kMax;
  }
  const bool negative = (act_raw < 0) != w.negative;
  return static_cast<int32_t>(negative ? -out : out);
}

fx::Value pmac_mul(const fx::Value& act, const quant::DeltaPotCode& w, const quant::DeltaPotConfig& cfg,
                   StatusFlags* flags) {
  if (act.fmt.total_bits != 9) throw ContractError("pmac_mul: activation must be a 9-bit code");
  if (cfg.terms() > 3) throw ContractError("pmac_mul: datapath supports at most three terms");
  const fx::Format out{16, act.fmt.frac_bits + kPmacProductShift, false};
  return fx::Value{pmac_raw(act.raw, w, cfg, kPmacProductShift, flags), out};
}

// ---------------------------------------------------------------------------
// LOD

int lod(uint32_t x, int width) {
  if (width < 1 || width > 32 || (width & (width - 1)) != 0) {
    throw ContractError("lod: width must be a power of two in [1, 32]");
  }
  auto mask = [](int bits) -> uint32_t { return bits >= 32 ? 0xFFFFFFFFu : ((1u << bits) - 1u); };
  int p = 0;
  int w = width;
  uint32_t d = x & mask(width);
  while (w > 1) {
    const int h = w / 2;
    const uint32_t upper = (d >> h) & mask(w - h);
    if (upper != 0) {
      d = upper;
      p += h;
    } else {
      d &= mask(h);
    }
    w = h;
  }
  return d == 1 ? p : -1;
}

// ---------------------------------------------------------------------------
// Divider

DivLut DivLut::midpoint() {
  DivLut lut;
  for (int i = 0; i < kSide; ++i) {
    for (int j = 0; j < kSide; ++j) {
      const double x = 1.0 + (i + 0.5) / kSide;
      const double y = 1.0 + (j + 0.5) / kSide;
      const double q = i == j ? 1.0 : x / y;
      lut.e_[static_cast<size_t>(i * kSide + j)] = static_cast<uint16_t>(std::lround(q * (1 << kFracBits)));
    }
  }
  return lut;
}

DivLut DivLut::from_entries(std::span<const uint16_t> entries) {
  if (entries.size() != kSide * kSide) throw ContractError("DivLut needs exactly 256 entries");
  DivLut lut;
  std::copy(entries.begin(), entries.end(), lut.e_.begin());
  return lut;
}

double Quotient::value() const { return std::ldexp(static_cast<double>(mantissa), shift - DivLut::kFracBits); }

uint32_t Quotient::to_raw(int frac_bits, uint32_t max_raw, StatusFlags* flags) const {
  if (div_by_zero) return max_raw;
  const int e = shift - DivLut::kFracBits + frac_bits;
  uint64_t v = mantissa;
  if (e >= 0) {
    if (e >= 40 || (v << e) > max_raw) {
      if (flags && v != 0) flags->raise(Flag::kSaturated);
      return v == 0 ? 0 : max_raw;
    }
    v <<= e;
  } else {
    v = (-e >= 64) ? 0 : (v >> (-e));
  }
  return static_cast<uint32_t>(v);
}

int mantissa_index(uint32_t x, int k) {
  if (k < 0) return 0;
  const uint32_t aligned = k >= 4 ? (x >> (k - 4)) : (x << (4 - k));
  return static_cast<int>(aligned & 0xFu);
}

Quotient divu_parts(uint32_t dividend, uint32_t divisor, const DivLut& lut, StatusFlags* flags) {
  if (dividend > 0xFFFFu || divisor > 0xFFFFu) throw ContractError("divu: operands must fit 16 bits");
  Quotient q;
  if (divisor == 0) {
    if (flags) flags->raise(Flag::kDivByZero);
    q.div_by_zero = true;
    q.mantissa = 0xFFFFu;
    q.shift = 31;
    return q;
  }
  // Stage 1: normalization through the leading-one detectors.
  const int k1 = lod(dividend, 16);
  const int k2 = lod(divisor, 16);
  if (k1 < 0) return q;
  // Stage 2: fractional quotient from the 2D table.
  q.mantissa = lut.at(mantissa_index(dividend, k1), mantissa_index(divisor, k2));
  // Stage 3: recombination with the exponent difference.
  q.shift = k1 - k2;
  return q;
}

uint16_t divu(uint16_t dividend, uint16_t divisor, const DivLut& lut, StatusFlags* flags) {
  return static_cast<uint16_t>(divu_parts(dividend, divisor, lut, flags).to_raw(DivLut::kFracBits, 0xFFFFu, flags));
}

fx::Value signed_div(const fx::Value& a, const fx::Value& b, const fx::Format& out, const DivLut& lut,
                     StatusFlags* flags) {
  const auto ma = static_cast<uint32_t>(std::abs(a.raw));
  const auto mb = static_cast<uint32_t>(std::abs(b.raw));
  const Quotient q = divu_parts(ma, mb, lut, flags);
  const bool negative = (a.raw < 0) != (b.raw < 0);
  const auto max_mag = static_cast<uint32_t>(out.max_raw());
  // value = (ma / mb) * 2^(fb - fa); expressed with out.frac_bits.
  const uint32_t mag = q.to_raw(b.fmt.frac_bits - a.fmt.frac_bits + out.frac_bits, max_mag, flags);
  const auto raw = static_cast<int32_t>(mag);
  // A zero divisor saturates with the dividend's sign.
  const bool neg = q.div_by_zero ? a.raw < 0 : negative;
  return fx::Value{neg ? -raw : raw, out};
}

// ---------------------------------------------------------------------------
// Exponential / sigmoid

ExpLut ExpLut::midpoint() {
  ExpLut lut;
  for (int i = 0; i < kSize; ++i) {
    lut.e_[static_cast<size_t>(i)] = static_cast<uint16_t>(std::lround(256.0 * std::exp2((i + 0.5) / kSize)));
  }
  // Pinned so that exp(0) is exactly one.
  lut.e_[0] = 256;
  return lut;
}

ExpLut ExpLut::from_entries(std::span<const uint16_t> entries) {
  if (entries.size() != kSize) throw ContractError("ExpLut needs exactly 256 entries");
  ExpLut lut;
  std::copy(entries.begin(), entries.end(), lut.e_.begin());
  return lut;
}

SigmaLut SigmaLut::standard() {
  constexpr int kIn = 1 << 11;   // kUnitIn one
  constexpr int kOut = 1 << 14;  // kProb one
  SigmaLut lut;
  lut.rows_ = {{
      {5 * kIn, -1, kOut},
      {19 * kIn / 8, 5, 27 * kOut / 32},
      {kIn, 3, 5 * kOut / 8},
      {0, 2, kOut / 2},
  }};
  return lut;
}

SigmaLut SigmaLut::from_entries(std::span<const uint16_t> entries) {
  if (entries.size() != kRows * 3) throw ContractError("SigmaLut needs exactly 12 entries");
  SigmaLut lut;
  for (size_t r = 0; r < kRows; ++r) {
    const uint16_t shift = entries[r * 3 + 1];
    lut.rows_[r] = SigmaSegment{entries[r * 3], shift == 0xFFFF ? -1 : static_cast<int>(shift), entries[r * 3 + 2]};
  }
  return lut;
}

std::vector<uint16_t> SigmaLut::entries() const {
  std::vector<uint16_t> out;
  for (const auto& r : rows_) {
    out.push_back(static_cast<uint16_t>(r.threshold_raw));
    out.push_back(r.slope_shift < 0 ? uint16_t{0xFFFF} : static_cast<uint16_t>(r.slope_shift));
    out.push_back(static_cast<uint16_t>(r.intercept_raw));
  }
  return out;
}

double ExpParts::value() const { return std::ldexp(static_cast<double>(mantissa), exponent - 8); }

fx::Value shift_addition_log2e(const fx::Value& x, StatusFlags* flags) {
  const int64_t v = x.raw;
  const int64_t y = v + (v >> 1) - (v >> 4);
  return fx::Value{fx::saturate(y, x.fmt, flags), x.fmt};
}

namespace {

void require_unit_input(const fx::Value& x) {
  if (!(x.fmt == fx::kUnitIn)) throw ContractError("exp/sigmoid unit expects a Q5.11 input");
}

}  // namespace

ExpParts ExpSigmaUnit::exp_parts(const fx::Value& x, StatusFlags* flags) const {
  require_unit_input(x);
  ExpParts p;
  if (x.raw >= static_cast<int32_t>(kExpUpper * (1 << fx::kUnitIn.frac_bits))) {
    if (flags) flags->raise(Flag::kExpOverflow);
    p.overflow = true;
    p.mantissa = 0xFFFF;
    p.exponent = 16;
    return p;
  }
  const fx::Value y = shift_addition_log2e(x, flags);
  constexpr int kFrac = fx::kUnitIn.frac_bits;
  const int u = y.raw >> kFrac;  // floor, so the fraction is in [0, 1)
  const int v = y.raw & ((1 << kFrac) - 1);
  p.mantissa = exp_lut_.at(v >> (kFrac - 8));
  p.exponent = u;
  return p;
}

fx::Value ExpSigmaUnit::exp(const fx::Value& x, const fx::Format& out, StatusFlags* flags) const {
  const ExpParts p = exp_parts(x, flags);
  if (p.overflow) return fx::Value{out.max_raw(), out};
  const int e = p.exponent - 8 + out.frac_bits;
  int64_t raw = p.mantissa;
  if (e >= 0) {
    raw = e >= 40 ? INT64_MAX : (raw << e);
  } else {
    raw = -e >= 63 ? 0 : (raw >> (-e));
  }
  if (raw > out.max_raw()) {
    if (flags) flags->raise(Flag::kExpOverflow);
    raw = out.max_raw();
  }
  return fx::Value{static_cast<int32_t>(raw), out};
}

fx::Value ExpSigmaUnit::sigmoid(const fx::Value& x) const {
  require_unit_input(x);
  constexpr int kAlign = fx::kProb.frac_bits - fx::kUnitIn.frac_bits;
  constexpr int32_t kOne = 1 << fx::kProb.frac_bits;
  const int32_t a = std::abs(x.raw);
  int32_t f = 0;
  for (const auto& seg : sigma_lut_.segments()) {
    if (a < seg.threshold_raw) continue;
    int32_t slope_term = 0;
    if (seg.slope_shift >= 0) {
      const int s = kAlign - seg.slope_shift;
      slope_term = s >= 0 ? (a << s) : (a >> (-s));
    }
    f = std::min(kOne, slope_term + seg.intercept_raw);
    break;
  }
  // Reflection for negative inputs.
  return fx::Value{x.raw < 0 ? kOne - f : f, fx::kProb};
}

fx::Value exp_sigma(const fx::Value& x, ExpSigmaMode mode, const ExpSigmaUnit& unit, const fx::Format& exp_out,
                    StatusFlags* flags) {
  return mode == ExpSigmaMode::kExp ? unit.exp(x, exp_out, flags) : unit.sigmoid(x);
}

}  // namespace hfrwkv::units

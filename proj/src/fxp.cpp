#include "hfrwkv/fxp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <string>

namespace hfrwkv {

std::string StatusFlags::describe() const {
  std::string out;
  auto add = [&](Flag f, const char* name) {
    if (test(f)) {
      if (!out.empty()) out += ",";
      out += name;
    }
  };
  add(Flag::kSaturated, "saturated");
  add(Flag::kDivByZero, "div_by_zero");
  add(Flag::kExpOverflow, "exp_overflow");
  add(Flag::kAccOverflow, "acc_overflow");
  return out.empty() ? "none" : out;
}

}  // namespace hfrwkv

namespace hfrwkv::fx {

void Format::validate() const {
  if (frac_bits < 1 || frac_bits >= total_bits || total_bits > 32) {
    throw ContractError("fixed-point format requires 1 <= frac_bits < total_bits <= 32, got " +
                        std::to_string(total_bits) + "/" + std::to_string(frac_bits));
  }
}

double Value::real() const { return std::ldexp(static_cast<double>(raw), -fmt.frac_bits); }

double Vec::real(size_t i) const { return std::ldexp(static_cast<double>(elems[i]), unit_exp()); }

std::vector<double> Vec::to_real() const {
  std::vector<double> out(elems.size());
  for (size_t i = 0; i < elems.size(); ++i) out[i] = real(i);
  return out;
}

int32_t saturate(int64_t v, const Format& fmt, StatusFlags* flags) {
  if (v > fmt.max_raw()) {
    if (flags) flags->raise(Flag::kSaturated);
    return fmt.max_raw();
  }
  if (v < fmt.min_raw()) {
    if (flags) flags->raise(Flag::kSaturated);
    return fmt.min_raw();
  }
  return static_cast<int32_t>(v);
}

int64_t shift_right_round(int64_t v, int s, Rounding mode) {
  if (s <= 0) return v;
  if (s >= 63) {
    switch (mode) {
      case Rounding::kFloor: return v < 0 ? -1 : 0;
      default: return 0;
    }
  }
  const int64_t floor_q = v >> s;  // arithmetic shift
  const int64_t rem = v - (floor_q << s);  // in [0, 2^s)
  switch (mode) {
    case Rounding::kFloor:
      return floor_q;
    case Rounding::kTowardZero:
      return (v < 0 && rem != 0) ? floor_q + 1 : floor_q;
    case Rounding::kNearestEven: {
      const int64_t half = int64_t{1} << (s - 1);
      if (rem > half || (rem == half && (floor_q & 1))) return floor_q + 1;
      return floor_q;
    }
  }
  return floor_q;
}

namespace {

void require_same(const Format& a, const Format& b, const char* op) {
  if (!(a == b)) throw ContractError(std::string(op) + ": operand formats differ");
}

// Saturates to the int64 extremes instead of overflowing.
int64_t shift_left_wide(int64_t v, int s) {
  if (v == 0 || s <= 0) return v;
  if (s >= 62 || std::abs(v) > (INT64_MAX >> s)) return v > 0 ? INT64_MAX : INT64_MIN;
  return v * (int64_t{1} << s);
}

}  // namespace

Value add(const Value& a, const Value& b, StatusFlags* flags) {
  require_same(a.fmt, b.fmt, "fx::add");
  return Value{saturate(int64_t{a.raw} + b.raw, a.fmt, flags), a.fmt};
}

Value shift(const Value& a, int s, StatusFlags* flags) {
  if (std::abs(s) >= a.fmt.total_bits + 8) throw ContractError("fx::shift: shift amount out of range");
  if (s >= 0) return Value{saturate(shift_left_wide(a.raw, s), a.fmt, flags), a.fmt};
  return Value{saturate(int64_t{a.raw} >> (-s), a.fmt, flags), a.fmt};
}

Value requantize(const Value& a, const Format& target, Rounding mode, StatusFlags* flags) {
  const int ds = a.fmt.frac_bits - target.frac_bits;
  int64_t v = a.raw;
  if (ds > 0) {
    v = shift_right_round(v, ds, mode);
  } else if (ds < 0) {
    v = shift_left_wide(v, -ds);
  }
  return Value{saturate(v, target, flags), target};
}

Value from_real(double x, const Format& fmt, StatusFlags* flags) {
  const double scaled = std::nearbyint(std::ldexp(x, fmt.frac_bits));
  if (!(scaled < 9.0e18) || !(scaled > -9.0e18)) {
    if (flags) flags->raise(Flag::kSaturated);
    return Value{scaled > 0 ? fmt.max_raw() : fmt.min_raw(), fmt};
  }
  return Value{saturate(static_cast<int64_t>(scaled), fmt, flags), fmt};
}

Vec normalize(std::span<const int64_t> wide, int unit_exp, const Format& target) {
  uint64_t max_abs = 0;
  for (int64_t v : wide) max_abs = std::max<uint64_t>(max_abs, static_cast<uint64_t>(v < 0 ? -v : v));

  Vec out;
  out.fmt = target;
  out.elems.resize(wide.size());
  if (max_abs == 0) {
    out.scale_exp = unit_exp + target.frac_bits;
    return out;
  }

  const auto limit = static_cast<uint64_t>(target.max_raw());
  // s > 0 drops bits, s < 0 widens exactly.
  int s = (63 - std::countl_zero(max_abs)) - (63 - std::countl_zero(limit));
  auto fits = [&](int shift) {
    if (shift <= 0) return (max_abs << (-shift)) <= limit;
    return static_cast<uint64_t>(shift_right_round(static_cast<int64_t>(max_abs), shift, Rounding::kNearestEven)) <=
           limit;
  };
  while (!fits(s)) ++s;
  while (fits(s - 1)) --s;

  for (size_t i = 0; i < wide.size(); ++i) {
    const int64_t v = s >= 0 ? shift_right_round(wide[i], s, Rounding::kNearestEven) : shift_left_wide(wide[i], -s);
    out.elems[i] = saturate(v, target);
  }
  out.scale_exp = unit_exp + s + target.frac_bits;
  return out;
}

Vec normalize(const Vec& v, const Format& target) {
  std::vector<int64_t> wide(v.elems.begin(), v.elems.end());
  return normalize(wide, v.unit_exp(), target);
}

Vec rescale(const Vec& v, const Format& target, int scale_exp, Rounding mode, StatusFlags* flags) {
  Vec out;
  out.fmt = target;
  out.scale_exp = scale_exp;
  out.elems.resize(v.size());
  const int s = (scale_exp - target.frac_bits) - v.unit_exp();
  for (size_t i = 0; i < v.size(); ++i) {
    int64_t x = v.elems[i];
    if (s > 0) {
      x = shift_right_round(x, s, mode);
    } else if (s < 0) {
      x = shift_left_wide(x, -s);
    }
    out.elems[i] = saturate(x, target, flags);
  }
  return out;
}

Vec quantize_block(std::span<const double> x, const Format& target) {
  double max_abs = 0.0;
  for (double v : x) max_abs = std::max(max_abs, std::fabs(v));
  Vec out;
  out.fmt = target;
  out.elems.assign(x.size(), 0);
  if (max_abs == 0.0) return out;
  // Smallest unit exponent e with round(max_abs / 2^e) <= max_raw.
  int e = std::ilogb(max_abs) - (target.total_bits - 2);
  auto fits = [&](int unit) { return std::nearbyint(std::ldexp(max_abs, -unit)) <= target.max_raw(); };
  while (!fits(e)) ++e;
  while (fits(e - 1)) --e;
  for (size_t i = 0; i < x.size(); ++i) {
    out.elems[i] = saturate(static_cast<int64_t>(std::nearbyint(std::ldexp(x[i], -e))), target);
  }
  out.scale_exp = e + target.frac_bits;
  return out;
}

}  // namespace hfrwkv::fx

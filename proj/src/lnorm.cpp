#include "hfrwkv/lnorm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace hfrwkv::lnorm {

void LnConfig::validate() const {
  if (dim == 0) throw ContractError("layernorm: dim must be positive");
  if (tree_par <= 0) throw ContractError("layernorm: tree parallelism must be positive");
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  for (const auto* p : {&gain, &bias}) {
    if (!p->has_value()) continue;
    if ((*p)->size() != dim) throw ContractError("layernorm: affine parameter length mismatch");
    if (!(*p)->scale.is_pow2()) throw ContractError("layernorm: affine parameters need power-of-two scales");
  }
}

SumResult atac_sum(std::span<const int64_t> x, int tree_par, StatusFlags* flags) {
  if (tree_par <= 0) throw ContractError("atac_sum: tree parallelism must be positive");
  constexpr int64_t kAccMax = std::numeric_limits<int32_t>::max();
  constexpr int64_t kAccMin = std::numeric_limits<int32_t>::min();
  const auto p = static_cast<size_t>(tree_par);
  int64_t acc = 0;
  std::vector<int64_t> level;
  for (size_t b = 0; b < x.size(); b += p) {
    level.assign(x.begin() + static_cast<std::ptrdiff_t>(b), x.begin() + static_cast<std::ptrdiff_t>(std::min(x.size(), b + p)));
    while (level.size() > 1) {
      const size_t half = (level.size() + 1) / 2;
      for (size_t i = 0; i < level.size() / 2; ++i) level[i] = level[2 * i] + level[2 * i + 1];
      if (level.size() % 2 != 0) level[level.size() / 2] = level.back();
      level.resize(half);
    }
    acc += level.front();
    if (acc > kAccMax || acc < kAccMin) {
      if (flags) flags->raise(Flag::kAccOverflow);
      acc = std::clamp(acc, kAccMin, kAccMax);
    }
  }
  const auto d = static_cast<int64_t>(x.size());
  return SumResult{acc, CycleReport{"atac", d, tree_par, d == 0 ? 0 : atac_cycles(d, tree_par)}};
}

SumResult atac_sum(const fx::Vec& x, int tree_par, StatusFlags* flags) {
  std::vector<int64_t> wide(x.elems.begin(), x.elems.end());
  return atac_sum(wide, tree_par, flags);
}

uint16_t isqrt(uint32_t v) {
  uint32_t rem = 0;
  uint32_t root = 0;
  for (int i = 0; i < 16; ++i) {
    rem = (rem << 2) | (v >> 30);
    v <<= 2;
    root <<= 1;
    const uint32_t trial = (root << 1) | 1u;
    if (rem >= trial) {
      rem -= trial;
      root |= 1u;
    }
  }
  return static_cast<uint16_t>(root);
}

ShiftAddReciprocal ShiftAddReciprocal::for_divisor(uint64_t d, int max_terms) {
  if (d == 0) throw ContractError("reciprocal of zero");
  if (max_terms < 1) throw ContractError("reciprocal needs at least one term");
  ShiftAddReciprocal r;
  if (std::has_single_bit(d)) {
    r.terms_.push_back(Term{1, std::countr_zero(d)});
    return r;
  }
  double rem = 1.0 / static_cast<double>(d);
  for (int t = 0; t < max_terms && rem != 0.0; ++t) {
    const int e = std::ilogb(std::fabs(rem));
    const double lo = std::ldexp(1.0, e);
    const double hi = std::ldexp(1.0, e + 1);
    const bool use_hi = std::fabs(std::fabs(rem) - hi) < std::fabs(std::fabs(rem) - lo);
    const int sign = rem < 0 ? -1 : 1;
    const int ex = use_hi ? e + 1 : e;
    r.terms_.push_back(Term{sign, -ex});
    rem -= sign * std::ldexp(1.0, ex);
  }
  return r;
}

double ShiftAddReciprocal::value() const {
  double v = 0.0;
  for (const auto& t : terms_) v += t.sign * std::ldexp(1.0, -t.shift);
  return v;
}

int64_t ShiftAddReciprocal::apply(int64_t x) const {
  int64_t v = 0;
  for (const auto& t : terms_) v += t.sign * (x >> t.shift);
  return v;
}

namespace {

// Variance and mean fraction bits relative to raw units.
constexpr int kVarFracBits = 2 * kMeanFracBits;
// Widest exponent gap kept exactly when the bias is aligned to the product.
constexpr int kMaxAlign = 40;

}  // namespace

LnResult layernorm(const fx::Vec& x, const LnConfig& cfg, const units::DivLut& lut, StatusFlags* flags) {
  cfg.validate();
  if (x.size() != cfg.dim) throw ContractError("layernorm: input length does not match dim");
  if (x.fmt.total_bits > 9) throw ContractError("layernorm: input must be a 9-bit activation vector");

  const size_t d = cfg.dim;
  std::vector<int64_t> lin(x.elems.begin(), x.elems.end());
  std::vector<int64_t> sq(d);
  for (size_t i = 0; i < d; ++i) sq[i] = lin[i] * lin[i];
  const SumResult s1 = atac_sum(lin, cfg.tree_par, flags);
  const SumResult s2 = atac_sum(sq, cfg.tree_par, flags);

  const auto recip = ShiftAddReciprocal::for_divisor(d);
  const int64_t mu = recip.apply(s1.sum * (int64_t{1} << kMeanFracBits));
  const int64_t m2 = recip.apply(s2.sum * (int64_t{1} << kVarFracBits));
  const int64_t var = std::max<int64_t>(0, m2 - mu * mu);

  constexpr double kRadicandMax = 4294967295.0;
  const double eps_scaled = std::ldexp(cfg.eps, kVarFracBits - 2 * x.unit_exp());
  const auto eps_raw = static_cast<int64_t>(std::clamp(std::nearbyint(eps_scaled), 1.0, kRadicandMax));
  const auto radicand = static_cast<uint32_t>(std::min<int64_t>(var + eps_raw, static_cast<int64_t>(kRadicandMax)));
  const uint16_t sigma = isqrt(radicand);

  // (x - mu) carries kMeanFracBits - 1 fraction bits so its magnitude fits the
  // 16-bit divider port; sigma carries kMeanFracBits.
  constexpr int kNumFrac = kMeanFracBits - 1;
  const fx::Format num_fmt{18, kNumFrac, false};
  const fx::Format den_fmt{18, kMeanFracBits, false};
  const fx::Value den{static_cast<int32_t>(sigma), den_fmt};
  std::vector<int32_t> z(d);
  for (size_t i = 0; i < d; ++i) {
    const int64_t centered = (lin[i] * (int64_t{1} << kMeanFracBits) - mu) >> 1;
    z[i] = units::signed_div(fx::Value{static_cast<int32_t>(centered), num_fmt}, den, fx::kInt16, lut, flags).raw;
  }
  const int z_unit = -fx::kInt16.frac_bits;

  std::vector<int64_t> wide(d);
  int unit = z_unit;
  if (cfg.gain) {
    unit += cfg.gain->scale.log2();
    for (size_t i = 0; i < d; ++i) wide[i] = int64_t{z[i]} * cfg.gain->codes[i];
  } else {
    for (size_t i = 0; i < d; ++i) wide[i] = z[i];
  }
  if (cfg.bias) {
    const int bias_unit = cfg.bias->scale.log2();
    const int target = std::max(std::min(unit, bias_unit), std::max(unit, bias_unit) - kMaxAlign);
    auto align = [target](int64_t v, int from) {
      const int s = from - target;
      return s >= 0 ? v * (int64_t{1} << s) : fx::shift_right_round(v, -s, fx::Rounding::kNearestEven);
    };
    for (size_t i = 0; i < d; ++i) wide[i] = align(wide[i], unit) + align(cfg.bias->codes[i], bias_unit);
    unit = target;
  }

  LnResult res;
  res.out = fx::normalize(wide, unit, fx::kAct9);
  res.cycles = CycleReport{"layernorm", static_cast<int64_t>(d), cfg.tree_par,
                           atac_cycles(static_cast<int64_t>(d), cfg.tree_par)};
  return res;
}

}  // namespace hfrwkv::lnorm

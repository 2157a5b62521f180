#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hfrwkv/cycles.hpp"
#include "hfrwkv/fxp.hpp"
#include "hfrwkv/quant.hpp"
#include "hfrwkv/status.hpp"
#include "hfrwkv/units.hpp"

// LayerNorm over the ATAC (addition tree + accumulator) structure.
//
// Both sums come from one pass over x; the variance uses
// E[x^2] - E[x]^2, the root comes from a digit-recurrence square root and the
// normalization goes through the LUT divider.

namespace hfrwkv::lnorm {

inline constexpr int kDefaultTreePar = 512;
/// Extra fraction bits kept on the mean, relative to the input code.
inline constexpr int kMeanFracBits = 8;

struct LnConfig {
  size_t dim = 0;
  int tree_par = kDefaultTreePar;
  /// Added to the variance, in real units.
  double eps = 1.0 / 1024.0;
  std::optional<quant::U9Vector> gain;
  std::optional<quant::U9Vector> bias;

  void validate() const;
};

struct SumResult {
  int64_t sum = 0;
  CycleReport cycles;
};

/// Exact sum over blocks of P through a pairwise tree, accumulated in a
/// 32-bit register (kAccOverflow if it would not fit).
SumResult atac_sum(std::span<const int64_t> x, int tree_par, StatusFlags* flags = nullptr);
SumResult atac_sum(const fx::Vec& x, int tree_par, StatusFlags* flags = nullptr);

/// floor(sqrt(v)) by restoring digit recurrence, one root bit per iteration.
uint16_t isqrt(uint32_t v);

/// 1/d as a sum of at most `max_terms` signed powers of two. Exact for
/// powers of two.
class ShiftAddReciprocal {
 public:
  struct Term {
    int sign = 1;
    int shift = 0;
  };

  static ShiftAddReciprocal for_divisor(uint64_t d, int max_terms = 3);

  const std::vector<Term>& terms() const { return terms_; }
  double value() const;
  /// sum_i sign_i * (x >> shift_i), each shift flooring.
  int64_t apply(int64_t x) const;

 private:
  std::vector<Term> terms_;
};

struct LnResult {
  fx::Vec out;
  CycleReport cycles;
};

/// Normalizes a 9-bit activation vector; the result is a 9-bit activation
/// vector after the optional affine step.
LnResult layernorm(const fx::Vec& x, const LnConfig& cfg, const units::DivLut& lut, StatusFlags* flags = nullptr);

}  // namespace hfrwkv::lnorm

#pragma once

#include <cstddef>
#include <vector>

#include "hfrwkv/cycles.hpp"
#include "hfrwkv/fxp.hpp"
#include "hfrwkv/quant.hpp"
#include "hfrwkv/status.hpp"
#include "hfrwkv/units.hpp"

// Matrix-Vector Processing Array: column-streamed matrix-vector multiply,
// element-wise multiply and element-wise add over PMAC lanes.
//
// All outputs are kInt16 vectors whose scale_exp folds in the activation
// exponent, the weight tensor's 2*gamma and the accumulator alignment.

namespace hfrwkv::mvpa {

struct MvpaConfig {
  int lanes = 384;
  int acc_bits = 16;

  void validate() const;
};

struct VecResult {
  fx::Vec out;
  CycleReport cycles;
};

/// A QMatrix prepared for the array. The accumulator alignment is fixed per
/// matrix from its largest row L1 norm so that no 9-bit input can overflow
/// the 16-bit accumulators.
class PmacMatrix {
 public:
  PmacMatrix() = default;
  explicit PmacMatrix(quant::QMatrix w);

  size_t rows() const { return w_.rows; }
  size_t cols() const { return w_.cols; }
  const quant::QMatrix& weights() const { return w_; }
  /// Fraction bits kept per product relative to the activation code.
  int acc_shift() const { return acc_shift_; }
  /// log2(2 * gamma).
  int scale_log2() const { return w_.scale.log2() + 1; }

 private:
  quant::QMatrix w_;
  int acc_shift_ = 0;
};

/// Largest product shift for which 255 * l1 * 2^shift fits the accumulator.
int accumulator_shift(double max_row_l1, int acc_bits = 16);

/// r_i = sum_j pmac(v_j, W_ij), ascending j, saturating 16-bit accumulators.
/// `threads` splits rows across workers; values never depend on it.
VecResult mv_mul(const PmacMatrix& w, const fx::Vec& v, const MvpaConfig& cfg, StatusFlags* flags = nullptr,
                 int threads = 1);
VecResult mv_mul(const quant::QMatrix& w, const fx::Vec& v, const MvpaConfig& cfg, StatusFlags* flags = nullptr,
                 int threads = 1);

/// Lane-wise PMAC product with the accumulators disabled.
VecResult ew_mul(const fx::Vec& a, const quant::DpotVector& w, const MvpaConfig& cfg,
                 int product_shift = units::kPmacProductShift, StatusFlags* flags = nullptr);

/// Lane-wise activation product (9x9 or 16x16 exact), normalized to kInt16.
VecResult ew_mul(const fx::Vec& a, const fx::Vec& b, const MvpaConfig& cfg);

/// Lane-wise saturating add; formats and exponents must match.
VecResult ew_add(const fx::Vec& a, const fx::Vec& b, const MvpaConfig& cfg, StatusFlags* flags = nullptr);

/// Add through the alignment shifters: both operands are brought to the finer
/// exponent in wide adders and the sum is normalized into `out`.
VecResult ew_add_aligned(const fx::Vec& a, const fx::Vec& b, const fx::Format& out, const MvpaConfig& cfg);

}  // namespace hfrwkv::mvpa

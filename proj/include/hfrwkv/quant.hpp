#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Delta-PoT weight quantization plus the 9-bit uniform format and the
// comparison baselines (RTN, PoT, LogQ, APoT).
//
// A Delta-PoT code stores a sign and n difference-encoded exponents dq_i.
// With p_{-1} = 1 and p_i = p_{i-1} * 2^-dq_i, the decoded value is
//   2 * gamma * sign * sum_i p_i,
// where dq_i == 0 zeroes p_i and every later term.

namespace hfrwkv::quant {

inline constexpr int kMaxTerms = 8;

struct DeltaPotConfig {
  std::vector<int> term_bits{3, 3, 2};

  int terms() const { return static_cast<int>(term_bits.size()); }
  /// Sign bit plus every difference field.
  int total_bits() const;
  int max_delta(int i) const { return (1 << term_bits[static_cast<size_t>(i)]) - 1; }
  void validate() const;

  /// Splits `bits` (sign included) over at most three terms, widest first.
  static DeltaPotConfig for_bits(int bits);

  friend bool operator==(const DeltaPotConfig&, const DeltaPotConfig&) = default;
};

struct DeltaPotCode {
  bool negative = false;
  std::array<uint8_t, kMaxTerms> deltas{};

  bool is_zero() const { return deltas[0] == 0; }
  friend bool operator==(const DeltaPotCode&, const DeltaPotCode&) = default;
};

/// Per-tensor scale. For Delta-PoT this is gamma; for uniform 9-bit codes it
/// is the step size.
struct TensorScale {
  double gamma = 1.0;

  bool is_pow2() const;
  /// log2(gamma); only meaningful when is_pow2().
  int log2() const;
};

/// Canonical form: no nonzero field after the first zero field, and the zero
/// code is positive.
bool is_canonical(const DeltaPotCode& code, const DeltaPotConfig& cfg);
DeltaPotCode canonicalize(DeltaPotCode code, const DeltaPotConfig& cfg);

/// Cumulative exponents q_i of the active terms (p_i = 2^-q_i).
int active_exponents(const DeltaPotCode& code, const DeltaPotConfig& cfg, std::array<int, kMaxTerms>& q);

/// Signed sum of p_i, i.e. the decoded value divided by 2*gamma.
double unit_level(const DeltaPotCode& code, const DeltaPotConfig& cfg);
double dpot_decode(const DeltaPotCode& code, const DeltaPotConfig& cfg, const TensorScale& scale);

/// Bit image of a code: sign first, then dq_0..dq_{n-1}, each MSB-first.
uint32_t pack_code(const DeltaPotCode& code, const DeltaPotConfig& cfg);
DeltaPotCode unpack_code(uint32_t bits, const DeltaPotConfig& cfg);

/// Enumerated level set of one configuration, with encode by nearest level.
class DpotCodebook {
 public:
  explicit DpotCodebook(DeltaPotConfig cfg);

  const DeltaPotConfig& config() const { return cfg_; }
  /// Distinct non-negative unit levels, ascending (0 first).
  const std::vector<double>& levels() const { return levels_; }
  /// Canonical positive code for levels()[i].
  const DeltaPotCode& code_for(size_t i) const { return codes_[i]; }
  double max_level() const { return levels_.back(); }

  /// Nearest codebook entry to w; ties go to the smaller magnitude and values
  /// beyond the top level clamp to it.
  DeltaPotCode encode(double w, const TensorScale& scale) const;
  /// Index into levels() of the nearest level to a non-negative unit value.
  size_t nearest(double unit) const;

 private:
  DeltaPotConfig cfg_;
  std::vector<double> levels_;
  std::vector<DeltaPotCode> codes_;
};

std::vector<double> dpot_codebook(const DeltaPotConfig& cfg);
DeltaPotCode dpot_encode(double w, const DeltaPotConfig& cfg, const TensorScale& scale);

struct QMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<DeltaPotCode> codes;  // row-major
  TensorScale scale;
  DeltaPotConfig config;

  const DeltaPotCode& at(size_t r, size_t c) const { return codes[r * cols + c]; }
  std::vector<double> dequantize() const;
};

struct DpotVector {
  std::vector<DeltaPotCode> codes;
  TensorScale scale;
  DeltaPotConfig config;

  size_t size() const { return codes.size(); }
  std::vector<double> dequantize() const;
};

inline constexpr int kU9Max = 255;

struct U9Vector {
  std::vector<int16_t> codes;  // each in [-255, 255]
  TensorScale scale;           // value = code * scale.gamma

  size_t size() const { return codes.size(); }
  std::vector<double> dequantize() const;
};

enum class ScaleMode {
  kExact,  // scale = max|x| / 255
  kPow2,   // smallest power of two >= max|x| / 255
};

U9Vector quantize_uniform9(std::span<const double> x, ScaleMode mode = ScaleMode::kExact);

enum class GammaMode {
  kMaxMatch,    // top level equals max|w|
  kGridSearch,  // MSE-minimizing sweep that includes the max-match point
  kPow2,        // best of the two powers of two bracketing max-match
};

TensorScale calibrate_gamma(std::span<const double> w, const DeltaPotConfig& cfg, GammaMode mode = GammaMode::kMaxMatch);

QMatrix quantize_matrix(std::span<const double> w, size_t rows, size_t cols, const DeltaPotConfig& cfg,
                        GammaMode mode = GammaMode::kPow2);
DpotVector quantize_dpot_vector(std::span<const double> w, const DeltaPotConfig& cfg,
                                GammaMode mode = GammaMode::kPow2);

enum class Scheme { kRtn, kPot, kLogQ, kApot, kDeltaPot };

Scheme parse_scheme(std::string_view name);
std::string_view scheme_name(Scheme s);

/// Fake quantization result: signed level indices plus the dequantized copy.
struct FakeQuant {
  std::vector<int32_t> codes;
  std::vector<double> dequant;
  double scale = 1.0;
};

/// Unsigned APoT unit levels for total bit-width `bits` and base width k:
/// n = bits / k terms, p_i in {0, 2^-i, 2^-(i+n), ..., 2^-(i+(2^k-2)n)}.
std::vector<double> apot_levels(int bits, int k);

FakeQuant quantize_baseline(std::span<const double> x, Scheme scheme, int bits);

struct ErrorStats {
  double mse = 0.0;
  double max_abs = 0.0;
};

ErrorStats reconstruction_error(std::span<const double> ref, std::span<const double> approx);

}  // namespace hfrwkv::quant

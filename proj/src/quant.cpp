#include "hfrwkv/quant.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

#include "hfrwkv/status.hpp"

namespace hfrwkv::quant {

int DeltaPotConfig::total_bits() const {
  int sum = 1;
  for (int k : term_bits) sum += k;
  return sum;
}

void DeltaPotConfig::validate() const {
  if (term_bits.empty() || term_bits.size() > static_cast<size_t>(kMaxTerms)) {
    throw ContractError("delta-pot config needs between 1 and " + std::to_string(kMaxTerms) + " terms");
  }
  for (int k : term_bits) {
    if (k < 1 || k > 6) throw ContractError("delta-pot term width must be in [1, 6], got " + std::to_string(k));
  }
  if (total_bits() > 32) throw ContractError("delta-pot code wider than 32 bits");
}

DeltaPotConfig DeltaPotConfig::for_bits(int bits) {
  if (bits < 2) throw ContractError("delta-pot needs at least 2 bits");
  const int fields = bits - 1;
  const int n = std::min(3, fields);
  DeltaPotConfig cfg;
  cfg.term_bits.assign(static_cast<size_t>(n), fields / n);
  for (int i = 0; i < fields % n; ++i) ++cfg.term_bits[static_cast<size_t>(i)];
  return cfg;
}

bool TensorScale::is_pow2() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) return false;
  int e = 0;
  return std::frexp(gamma, &e) == 0.5;
}

int TensorScale::log2() const { return std::ilogb(gamma); }

bool is_canonical(const DeltaPotCode& code, const DeltaPotConfig& cfg) {
  bool ended = false;
  for (int i = 0; i < kMaxTerms; ++i) {
    const uint8_t d = code.deltas[static_cast<size_t>(i)];
    if (i >= cfg.terms()) {
      if (d != 0) return false;
      continue;
    }
    if (d > cfg.max_delta(i)) return false;
    if (ended && d != 0) return false;
    if (d == 0) ended = true;
  }
  return !(code.is_zero() && code.negative);
}

DeltaPotCode canonicalize(DeltaPotCode code, const DeltaPotConfig& cfg) {
  bool ended = false;
  for (int i = 0; i < kMaxTerms; ++i) {
    auto& d = code.deltas[static_cast<size_t>(i)];
    if (i >= cfg.terms() || ended) d = 0;
    if (d == 0) ended = true;
  }
  if (code.is_zero()) code.negative = false;
  return code;
}

int active_exponents(const DeltaPotCode& code, const DeltaPotConfig& cfg, std::array<int, kMaxTerms>& q) {
  int count = 0;
  int acc = 0;
  for (int i = 0; i < cfg.terms(); ++i) {
    const int d = code.deltas[static_cast<size_t>(i)];
    if (d == 0) break;
    acc += d;
    q[static_cast<size_t>(count++)] = acc;
  }
  return count;
}

double unit_level(const DeltaPotCode& code, const DeltaPotConfig& cfg) {
  std::array<int, kMaxTerms> q{};
  const int n = active_exponents(code, cfg, q);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::ldexp(1.0, -q[static_cast<size_t>(i)]);
  return code.negative ? -sum : sum;
}

double dpot_decode(const DeltaPotCode& code, const DeltaPotConfig& cfg, const TensorScale& scale) {
  return 2.0 * scale.gamma * unit_level(code, cfg);
}

uint32_t pack_code(const DeltaPotCode& code, const DeltaPotConfig& cfg) {
  uint32_t bits = code.negative ? 1u : 0u;
  for (int i = 0; i < cfg.terms(); ++i) {
    bits = (bits << cfg.term_bits[static_cast<size_t>(i)]) | code.deltas[static_cast<size_t>(i)];
  }
  return bits;
}

DeltaPotCode unpack_code(uint32_t bits, const DeltaPotConfig& cfg) {
  DeltaPotCode code;
  for (int i = cfg.terms() - 1; i >= 0; --i) {
    const int k = cfg.term_bits[static_cast<size_t>(i)];
    code.deltas[static_cast<size_t>(i)] = static_cast<uint8_t>(bits & ((1u << k) - 1));
    bits >>= k;
  }
  code.negative = (bits & 1u) != 0;
  return code;
}

DpotCodebook::DpotCodebook(DeltaPotConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  // Enumerate canonical codes depth-first: a zero field ends the code.
  std::map<double, DeltaPotCode> unique;
  DeltaPotCode code;
  unique.emplace(0.0, code);
  auto recurse = [&](auto&& self, int term, double prefix_value, int prefix_exp) -> void {
    if (term >= cfg_.terms()) return;
    for (int d = 1; d <= cfg_.max_delta(term); ++d) {
      code.deltas[static_cast<size_t>(term)] = static_cast<uint8_t>(d);
      const int q = prefix_exp + d;
      const double v = prefix_value + std::ldexp(1.0, -q);
      unique.emplace(v, code);
      self(self, term + 1, v, q);
    }
    code.deltas[static_cast<size_t>(term)] = 0;
  };
  recurse(recurse, 0, 0.0, 0);
  levels_.reserve(unique.size());
  codes_.reserve(unique.size());
  for (const auto& [v, c] : unique) {
    levels_.push_back(v);
    codes_.push_back(c);
  }
}

size_t DpotCodebook::nearest(double unit) const {
  if (!(unit > 0.0)) return 0;
  const auto it = std::lower_bound(levels_.begin(), levels_.end(), unit);
  if (it == levels_.end()) return levels_.size() - 1;
  const auto hi = static_cast<size_t>(it - levels_.begin());
  if (hi == 0) return 0;
  const size_t lo = hi - 1;
  // Ties go to the smaller magnitude.
  return (unit - levels_[lo] <= levels_[hi] - unit) ? lo : hi;
}

DeltaPotCode DpotCodebook::encode(double w, const TensorScale& scale) const {
  if (!(scale.gamma > 0.0)) throw ContractError("delta-pot encode requires gamma > 0");
  const double unit = std::fabs(w) / (2.0 * scale.gamma);
  DeltaPotCode code = codes_[nearest(unit)];
  code.negative = w < 0.0 && !code.is_zero();
  return code;
}

std::vector<double> dpot_codebook(const DeltaPotConfig& cfg) { return DpotCodebook(cfg).levels(); }

DeltaPotCode dpot_encode(double w, const DeltaPotConfig& cfg, const TensorScale& scale) {
  return DpotCodebook(cfg).encode(w, scale);
}

std::vector<double> QMatrix::dequantize() const {
  std::vector<double> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) out[i] = dpot_decode(codes[i], config, scale);
  return out;
}

std::vector<double> DpotVector::dequantize() const {
  std::vector<double> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) out[i] = dpot_decode(codes[i], config, scale);
  return out;
}

std::vector<double> U9Vector::dequantize() const {
  std::vector<double> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] * scale.gamma;
  return out;
}

namespace {

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

double dpot_mse(std::span<const double> w, const DpotCodebook& book, const TensorScale& scale) {
  double acc = 0.0;
  for (double v : w) {
    const double d = dpot_decode(book.encode(v, scale), book.config(), scale) - v;
    acc += d * d;
  }
  return acc / static_cast<double>(w.size());
}

// Nearest element of an ascending non-negative level set; ties to smaller.
size_t nearest_level(const std::vector<double>& levels, double m) {
  const auto it = std::lower_bound(levels.begin(), levels.end(), m);
  if (it == levels.end()) return levels.size() - 1;
  const auto hi = static_cast<size_t>(it - levels.begin());
  if (hi == 0) return 0;
  return (m - levels[hi - 1] <= levels[hi] - m) ? hi - 1 : hi;
}

FakeQuant project(std::span<const double> x, const std::vector<double>& levels, double scale) {
  FakeQuant out;
  out.scale = scale;
  out.codes.resize(x.size());
  out.dequant.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const size_t idx = nearest_level(levels, std::fabs(x[i]) / scale);
    const bool neg = x[i] < 0.0 && idx != 0;
    out.codes[i] = neg ? -static_cast<int32_t>(idx) : static_cast<int32_t>(idx);
    out.dequant[i] = (neg ? -levels[idx] : levels[idx]) * scale;
  }
  return out;
}

}  // namespace

U9Vector quantize_uniform9(std::span<const double> x, ScaleMode mode) {
  if (x.empty()) throw ContractError("quantize_uniform9: empty tensor");
  U9Vector out;
  out.codes.assign(x.size(), 0);
  const double m = max_abs(x);
  if (m == 0.0) {
    out.scale.gamma = 1.0;
    return out;
  }
  double scale = m / kU9Max;
  if (mode == ScaleMode::kPow2) scale = std::exp2(std::ceil(std::log2(scale)));
  out.scale.gamma = scale;
  for (size_t i = 0; i < x.size(); ++i) {
    const double q = std::nearbyint(x[i] / scale);
    out.codes[i] = static_cast<int16_t>(std::clamp(q, -double{kU9Max}, double{kU9Max}));
  }
  return out;
}

TensorScale calibrate_gamma(std::span<const double> w, const DeltaPotConfig& cfg, GammaMode mode) {
  if (w.empty()) throw ContractError("calibrate_gamma: empty tensor");
  const double m = max_abs(w);
  if (m == 0.0) return TensorScale{1.0};
  const DpotCodebook book(cfg);
  const TensorScale max_match{m / (2.0 * book.max_level())};

  switch (mode) {
    case GammaMode::kMaxMatch:
      return max_match;
    case GammaMode::kGridSearch: {
      TensorScale best = max_match;
      double best_mse = dpot_mse(w, book, best);
      for (int step = 1; step <= 50; ++step) {
        const TensorScale cand{max_match.gamma * (1.0 - 0.01 * step)};
        const double mse = dpot_mse(w, book, cand);
        if (mse < best_mse) {
          best_mse = mse;
          best = cand;
        }
      }
      return best;
    }
    case GammaMode::kPow2: {
      const double e = std::log2(max_match.gamma);
      const TensorScale hi{std::exp2(std::ceil(e))};
      const TensorScale lo{std::exp2(std::floor(e))};
      if (hi.gamma == lo.gamma) return hi;
      // Ties keep the larger scale so already-quantized tensors map to themselves.
      return dpot_mse(w, book, lo) < dpot_mse(w, book, hi) ? lo : hi;
    }
  }
  return max_match;
}

namespace {

// While every nonzero code starts with dq_0 >= 2, halving gamma and
// decrementing dq_0 is an exact alias. Taking the smallest such gamma makes
// the encoding of a tensor unique, so re-quantizing a dequantized tensor
// reproduces its codes.
void fold_scale(std::vector<DeltaPotCode>& codes, TensorScale& scale) {
  auto foldable = [&] {
    bool any = false;
    for (const auto& c : codes) {
      if (c.is_zero()) continue;
      if (c.deltas[0] < 2) return false;
      any = true;
    }
    return any;
  };
  while (foldable()) {
    scale.gamma /= 2.0;
    for (auto& c : codes)
      if (!c.is_zero()) --c.deltas[0];
  }
}

}  // namespace

QMatrix quantize_matrix(std::span<const double> w, size_t rows, size_t cols, const DeltaPotConfig& cfg,
                        GammaMode mode) {
  if (w.size() != rows * cols || w.empty()) throw ContractError("quantize_matrix: shape does not match data");
  const DpotCodebook book(cfg);
  QMatrix q;
  q.rows = rows;
  q.cols = cols;
  q.config = cfg;
  q.scale = calibrate_gamma(w, cfg, mode);
  q.codes.resize(w.size());
  for (size_t i = 0; i < w.size(); ++i) q.codes[i] = book.encode(w[i], q.scale);
  fold_scale(q.codes, q.scale);
  return q;
}

DpotVector quantize_dpot_vector(std::span<const double> w, const DeltaPotConfig& cfg, GammaMode mode) {
  if (w.empty()) throw ContractError("quantize_dpot_vector: empty tensor");
  const DpotCodebook book(cfg);
  DpotVector v;
  v.config = cfg;
  v.scale = calibrate_gamma(w, cfg, mode);
  v.codes.resize(w.size());
  for (size_t i = 0; i < w.size(); ++i) v.codes[i] = book.encode(w[i], v.scale);
  fold_scale(v.codes, v.scale);
  return v;
}

Scheme parse_scheme(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "rtn") return Scheme::kRtn;
  if (lower == "pot") return Scheme::kPot;
  if (lower == "logq") return Scheme::kLogQ;
  if (lower == "apot") return Scheme::kApot;
  if (lower == "dpot" || lower == "deltapot" || lower == "delta-pot") return Scheme::kDeltaPot;
  throw ContractError("unsupported quantization scheme: " + std::string(name));
}

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kRtn: return "RTN";
    case Scheme::kPot: return "PoT";
    case Scheme::kLogQ: return "LogQ";
    case Scheme::kApot: return "APoT";
    case Scheme::kDeltaPot: return "DeltaPoT";
  }
  return "?";
}

std::vector<double> apot_levels(int bits, int k) {
  if (k < 1 || bits < k) throw ContractError("apot_levels: need 1 <= k <= bits");
  const int n = bits / k;
  std::vector<double> levels{0.0};
  for (int i = 0; i < n; ++i) {
    std::vector<double> term{0.0};
    for (int j = 0; j <= (1 << k) - 2; ++j) term.push_back(std::ldexp(1.0, -(i + j * n)));
    std::vector<double> next;
    for (double a : levels)
      for (double b : term) next.push_back(a + b);
    levels = std::move(next);
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

FakeQuant quantize_baseline(std::span<const double> x, Scheme scheme, int bits) {
  if (bits < 2 || bits > 9) throw ContractError("quantize_baseline: bits must be in [2, 9]");
  if (x.empty()) throw ContractError("quantize_baseline: empty tensor");
  const double m = max_abs(x);
  if (m == 0.0) {
    return FakeQuant{std::vector<int32_t>(x.size(), 0), std::vector<double>(x.size(), 0.0), 1.0};
  }
  const int mag_levels = (1 << (bits - 1)) - 1;  // nonzero magnitudes with one sign bit

  switch (scheme) {
    case Scheme::kRtn: {
      FakeQuant out;
      out.scale = m / mag_levels;
      out.codes.resize(x.size());
      out.dequant.resize(x.size());
      for (size_t i = 0; i < x.size(); ++i) {
        const double q = std::clamp(std::nearbyint(x[i] / out.scale), -double(mag_levels), double(mag_levels));
        out.codes[i] = static_cast<int32_t>(q);
        out.dequant[i] = q * out.scale;
      }
      return out;
    }
    case Scheme::kPot: {
      // w_q = S * sign(w) * 2^E with E in {0, -1, ..., -(mag_levels-1)}.
      std::vector<double> levels{0.0};
      for (int e = -(mag_levels - 1); e <= 0; ++e) levels.push_back(std::ldexp(1.0, e));
      return project(x, levels, m);
    }
    case Scheme::kLogQ: {
      // Power-of-two scale; magnitude rounded in the log domain.
      const int e_max = static_cast<int>(std::lround(std::log2(m)));
      const int e_min = e_max - (mag_levels - 1);
      FakeQuant out;
      out.scale = std::ldexp(1.0, e_max);
      out.codes.resize(x.size());
      out.dequant.resize(x.size());
      for (size_t i = 0; i < x.size(); ++i) {
        const double a = std::fabs(x[i]);
        if (a < std::ldexp(1.0, e_min) / 2.0) {
          out.codes[i] = 0;
          out.dequant[i] = 0.0;
          continue;
        }
        const int e = std::clamp(static_cast<int>(std::lround(std::log2(a))), e_min, e_max);
        const int idx = e - e_min + 1;
        out.codes[i] = x[i] < 0 ? -idx : idx;
        out.dequant[i] = std::copysign(std::ldexp(1.0, e), x[i]);
      }
      return out;
    }
    case Scheme::kApot: {
      const int mag_bits = bits - 1;
      const int n = std::max(1, mag_bits / 2);
      const int k = mag_bits / n;
      const auto levels = apot_levels(n * k, k);
      return project(x, levels, m / levels.back());
    }
    case Scheme::kDeltaPot: {
      const DpotCodebook book(DeltaPotConfig::for_bits(bits));
      const TensorScale scale = calibrate_gamma(x, book.config(), GammaMode::kMaxMatch);
      FakeQuant out = project(x, book.levels(), 2.0 * scale.gamma);
      out.scale = scale.gamma;
      return out;
    }
  }
  throw ContractError("quantize_baseline: unknown scheme");
}

ErrorStats reconstruction_error(std::span<const double> ref, std::span<const double> approx) {
  if (ref.size() != approx.size()) throw ContractError("reconstruction_error: size mismatch");
  ErrorStats s;
  for (size_t i = 0; i < ref.size(); ++i) {
    const double d = approx[i] - ref[i];
    s.mse += d * d;
    s.max_abs = std::max(s.max_abs, std::fabs(d));
  }
  if (!ref.empty()) s.mse /= static_cast<double>(ref.size());
  return s;
}

}  // namespace hfrwkv::quant

#include "hfrwkv/mvpa.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

namespace hfrwkv::mvpa {

void MvpaConfig::validate() const {
  if (lanes <= 0) throw ContractError("mvpa: lanes must be positive");
  if (acc_bits != 16) throw ContractError("mvpa: accumulators are 16 bits wide");
}

namespace {

constexpr int kMaxAccShift = 24;
// Widest exponent gap the aligned adder keeps exactly.
constexpr int kMaxAlign = 40;

int require_pow2_scale(const quant::TensorScale& s, const char* what) {
  if (!s.is_pow2()) throw ContractError(std::string(what) + ": datapath needs a power-of-two gamma");
  return s.log2() + 1;
}

void require_activation(const fx::Vec& v, const char* what) {
  if (v.fmt.total_bits > 9) throw ContractError(std::string(what) + ": input must be a 9-bit activation vector");
}

fx::Vec int16_vec(size_t n, int unit_exp) {
  fx::Vec out;
  out.fmt = fx::kInt16;
  out.scale_exp = unit_exp + fx::kInt16.frac_bits;
  out.elems.assign(n, 0);
  return out;
}

}  // namespace

int accumulator_shift(double max_row_l1, int acc_bits) {
  if (max_row_l1 <= 0.0) return units::kPmacProductShift;
  const double limit = std::ldexp(1.0, acc_bits - 1) - 1.0;
  const double headroom = limit / (static_cast<double>(quant::kU9Max) * max_row_l1);
  const int p = static_cast<int>(std::floor(std::log2(headroom)));
  return std::clamp(p, -kMaxAccShift, kMaxAccShift);
}

PmacMatrix::PmacMatrix(quant::QMatrix w) : w_(std::move(w)) {
  if (w_.codes.size() != w_.rows * w_.cols) throw ContractError("PmacMatrix: code count does not match shape");
  if (w_.config.terms() > 3) throw ContractError("PmacMatrix: datapath supports at most three terms");
  require_pow2_scale(w_.scale, "PmacMatrix");
  double max_l1 = 0.0;
  for (size_t r = 0; r < w_.rows; ++r) {
    double l1 = 0.0;
    for (size_t c = 0; c < w_.cols; ++c) l1 += std::fabs(quant::unit_level(w_.at(r, c), w_.config));
    max_l1 = std::max(max_l1, l1);
  }
  acc_shift_ = accumulator_shift(max_l1);
}

VecResult mv_mul(const PmacMatrix& w, const fx::Vec& v, const MvpaConfig& cfg, StatusFlags* flags, int threads) {
  cfg.validate();
  require_activation(v, "mv_mul");
  if (v.size() != w.cols()) throw ContractError("mv_mul: vector length does not match matrix columns");

  const auto& q = w.weights();
  const int shift = w.acc_shift();
  VecResult res;
  res.out = int16_vec(w.rows(), v.unit_exp() - shift + w.scale_log2());
  res.cycles = CycleReport{"matvec", static_cast<int64_t>(w.cols()), cfg.lanes,
                           matvec_cycles(static_cast<int64_t>(w.rows()), static_cast<int64_t>(w.cols()), cfg.lanes)};

  auto run_rows = [&](size_t begin, size_t end, StatusFlags& local) {
    for (size_t r = begin; r < end; ++r) {
      int32_t acc = 0;
      for (size_t c = 0; c < q.cols; ++c) {
        const int32_t p = units::pmac_raw(v.elems[c], q.at(r, c), q.config, shift, &local);
        const int64_t next = int64_t{acc} + p;
        if (!fx::kInt16.contains(next)) local.raise(Flag::kAccOverflow);
        acc = fx::saturate(next, fx::kInt16);
      }
      res.out.elems[r] = acc;
    }
  };

  const size_t rows = w.rows();
  const size_t workers = std::clamp<size_t>(static_cast<size_t>(std::max(threads, 1)), 1, std::max<size_t>(rows, 1));
  std::vector<StatusFlags> local(workers);
  if (workers == 1) {
    run_rows(0, rows, local[0]);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (rows + workers - 1) / workers;
    for (size_t t = 0; t < workers; ++t) {
      const size_t b = std::min(rows, t * chunk);
      const size_t e = std::min(rows, b + chunk);
      pool.emplace_back([&, b, e, t] { run_rows(b, e, local[t]); });
    }
    for (auto& th : pool) th.join();
  }
  if (flags) {
    for (const auto& f : local) flags->merge(f);
  }
  return res;
}

VecResult mv_mul(const quant::QMatrix& w, const fx::Vec& v, const MvpaConfig& cfg, StatusFlags* flags, int threads) {
  return mv_mul(PmacMatrix(w), v, cfg, flags, threads);
}

VecResult ew_mul(const fx::Vec& a, const quant::DpotVector& w, const MvpaConfig& cfg, int product_shift,
                 StatusFlags* flags) {
  cfg.validate();
  require_activation(a, "ew_mul");
  if (a.size() != w.size()) throw ContractError("ew_mul: length mismatch");
  if (w.config.terms() > 3) throw ContractError("ew_mul: datapath supports at most three terms");
  const int scale_log2 = require_pow2_scale(w.scale, "ew_mul");

  VecResult res;
  res.out = int16_vec(a.size(), a.unit_exp() - product_shift + scale_log2);
  for (size_t i = 0; i < a.size(); ++i) {
    res.out.elems[i] = units::pmac_raw(a.elems[i], w.codes[i], w.config, product_shift, flags);
  }
  res.cycles = CycleReport{"ew_mul", static_cast<int64_t>(a.size()), cfg.lanes,
                           elementwise_cycles(static_cast<int64_t>(a.size()), cfg.lanes)};
  return res;
}

VecResult ew_mul(const fx::Vec& a, const fx::Vec& b, const MvpaConfig& cfg) {
  cfg.validate();
  if (a.size() != b.size()) throw ContractError("ew_mul: length mismatch");
  std::vector<int64_t> wide(a.size());
  for (size_t i = 0; i < a.size(); ++i) wide[i] = int64_t{a.elems[i]} * b.elems[i];
  VecResult res;
  res.out = fx::normalize(wide, a.unit_exp() + b.unit_exp(), fx::kInt16);
  res.cycles = CycleReport{"ew_mul", static_cast<int64_t>(a.size()), cfg.lanes,
                           elementwise_cycles(static_cast<int64_t>(a.size()), cfg.lanes)};
  return res;
}

VecResult ew_add(const fx::Vec& a, const fx::Vec& b, const MvpaConfig& cfg, StatusFlags* flags) {
  cfg.validate();
  if (a.size() != b.size()) throw ContractError("ew_add: length mismatch");
  if (!(a.fmt == b.fmt) || a.scale_exp != b.scale_exp) throw ContractError("ew_add: format mismatch");
  VecResult res;
  res.out.fmt = a.fmt;
  res.out.scale_exp = a.scale_exp;
  res.out.elems.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) res.out.elems[i] = fx::add(a.at(i), b.at(i), flags).raw;
  res.cycles = CycleReport{"ew_add", static_cast<int64_t>(a.size()), cfg.lanes,
                           elementwise_cycles(static_cast<int64_t>(a.size()), cfg.lanes)};
  return res;
}

VecResult ew_add_aligned(const fx::Vec& a, const fx::Vec& b, const fx::Format& out, const MvpaConfig& cfg) {
  cfg.validate();
  if (a.size() != b.size()) throw ContractError("ew_add: length mismatch");
  auto all_zero = [](const fx::Vec& v) { return std::all_of(v.elems.begin(), v.elems.end(), [](int32_t x) { return x == 0; }); };

  VecResult res;
  res.cycles = CycleReport{"ew_add", static_cast<int64_t>(a.size()), cfg.lanes,
                           elementwise_cycles(static_cast<int64_t>(a.size()), cfg.lanes)};
  if (all_zero(b)) {
    res.out = fx::normalize(a, out);
    return res;
  }
  if (all_zero(a)) {
    res.out = fx::normalize(b, out);
    return res;
  }
  const int unit = std::max(std::min(a.unit_exp(), b.unit_exp()), std::max(a.unit_exp(), b.unit_exp()) - kMaxAlign);
  auto align = [unit](int32_t raw, int from) -> int64_t {
    const int s = from - unit;
    return s >= 0 ? (int64_t{raw} << s) : fx::shift_right_round(raw, -s, fx::Rounding::kNearestEven);
  };
  std::vector<int64_t> wide(a.size());
  for (size_t i = 0; i < a.size(); ++i) wide[i] = align(a.elems[i], a.unit_exp()) + align(b.elems[i], b.unit_exp());
  res.out = fx::normalize(wide, unit, out);
  return res;
}

}  // namespace hfrwkv::mvpa

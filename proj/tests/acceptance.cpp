// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "hfrwkv/cycles.hpp"
#include "hfrwkv/engine.hpp"
#include "hfrwkv/lnorm.hpp"
#include "hfrwkv/modelio.hpp"
#include "hfrwkv/quant.hpp"
#include "hfrwkv/random_model.hpp"
#include "hfrwkv/reference.hpp"
#include "hfrwkv/units.hpp"
#include "oracles.hpp"

using namespace hfrwkv;

namespace {

// Pinned tolerances.
constexpr double kPmacSeconds = 10.0;
constexpr double kDivRelBound = 0.035;
constexpr double kDivSeconds = 60.0;
constexpr double kExpRelBound = 0.035;
constexpr double kSigmoidAbsBound = 0.02;
// Divider bound of the midpoint table plus two output ulps.
constexpr double kLnDivRel = 0.0625;
constexpr double kLnUlps = 2.0;
constexpr double kWkvRel = 1e-5;
constexpr double kE2eCosine = 0.99;
constexpr double kE2eArgmax = 0.95;
constexpr int kE2eSteps = 100;
constexpr double kE2eSeconds = 60.0;
constexpr int kFuzzCases = 10000;

constexpr int32_t kProbOne = 1 << 14;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome pmac_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  const quant::DeltaPotConfig cfg;
  const quant::DpotCodebook book(cfg);
  int64_t cases = 0, mismatches = 0;
  for (int a = -255; a <= 255; ++a) {
    for (size_t i = 0; i < book.levels().size(); ++i) {
      for (bool neg : {false, true}) {
        auto c = book.code_for(i);
        c.negative = neg && !c.is_zero();
        const double level = neg ? -book.levels()[i] : book.levels()[i];
        const auto got = units::pmac_mul(fx::Value{a, fx::kAct9}, c, cfg);
        mismatches += got.raw != oracle::pmac(a, level, units::kPmacProductShift);
        ++cases;
      }
    }
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kPmacSeconds, fmt("%lld cases, %lld mismatches, %.2f s", (long long)cases, (long long)mismatches, s)};
}

Outcome worked_example() {
  const auto ap = quant::apot_levels(4, 2);
  const double target = 1.25;
  const bool apot_lacks = std::find(ap.begin(), ap.end(), target) == ap.end();
  const double nearest = *std::min_element(
      ap.begin(), ap.end(), [&](double a, double b) { return std::fabs(a - target) < std::fabs(b - target); });
  const auto dp = quant::dpot_codebook(quant::DeltaPotConfig{{2, 2}});
  const bool dpot_has = std::find(dp.begin(), dp.end(), 0.5 + 0.125) != dp.end();
  const bool pass = apot_lacks && nearest == 1.125 && dpot_has;
  return {pass, fmt("APoT nearest to 1.25 is %g, Delta-PoT holds 2(2^-1+2^-3): %s", nearest, dpot_has ? "yes" : "no")};
}

Outcome lod_exhaustive() {
  int64_t mismatches = units::lod(0) != -1;
  for (uint32_t x = 1; x < (1u << 16); ++x) mismatches += units::lod(x) != oracle::floor_log2(x);
  return {mismatches == 0, fmt("65536 inputs, %lld mismatches", (long long)mismatches)};
}

Outcome divu_sweep() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto lut = units::DivLut::midpoint();
  double max_rel = 0.0;
  bool diagonal = true;
  for (uint32_t x = 1; x < 4096; ++x) {
    for (uint32_t y = 1; y < 4096; ++y) {
      const double q = units::divu_parts(x, y, lut).value();
      if (x == y) diagonal = diagonal && q == 1.0;
      max_rel = std::max(max_rel, std::fabs(q * y / x - 1.0));
    }
  }
  StatusFlags f;
  const bool saturates = units::divu(5, 0, lut, &f) == 0xFFFF && f.test(Flag::kDivByZero);
  units::divu(5, 1, lut, &f);
  const bool sticky = f.test(Flag::kDivByZero);
  const double s = seconds_since(t0);
  const bool pass = max_rel <= kDivRelBound && diagonal && saturates && sticky && s < kDivSeconds;
  return {pass, fmt("max rel %.4f (bound %.3f), diagonal %s, div0 %s, %.1f s", max_rel, kDivRelBound,
                    diagonal ? "exact" : "inexact", saturates && sticky ? "saturates+sticky" : "wrong", s)};
}

Outcome exp_sweep() {
  const units::ExpSigmaUnit unit;
  double prev = 0.0, max_rel = 0.0;
  bool monotone = true;
  // Q5.11 input; step 2^-8 is 8 raw codes.
  for (int raw = -8 * 2048; raw < 8 * 2048; raw += 8) {
    const double y = unit.exp_parts(fx::Value{raw, fx::kUnitIn}).value();
    monotone = monotone && y >= prev;
    prev = y;
    max_rel = std::max(max_rel, std::fabs(y / std::exp(raw / 2048.0) - 1.0));
  }
  const bool one = unit.exp_parts(fx::Value{0, fx::kUnitIn}).value() == 1.0 &&
                   unit.exp(fx::Value{0, fx::kUnitIn}, fx::kProb).raw == kProbOne;
  return {max_rel <= kExpRelBound && monotone && one,
          fmt("max rel %.4f, monotone %s, exp(0) %s", max_rel, monotone ? "yes" : "no", one ? "exact" : "inexact")};
}

Outcome sigmoid_sweep() {
  const units::ExpSigmaUnit unit;
  double max_abs = 0.0;
  bool symmetric = true, saturated = true;
  for (int raw = -8 * 2048; raw <= 8 * 2048; raw += 8) {
    const int32_t f = unit.sigmoid(fx::Value{raw, fx::kUnitIn}).raw;
    symmetric = symmetric && f + unit.sigmoid(fx::Value{-raw, fx::kUnitIn}).raw == kProbOne;
    if (raw >= 5 * 2048) saturated = saturated && f == kProbOne;
    max_abs = std::max(max_abs, std::fabs(f / double(kProbOne) - 1.0 / (1.0 + std::exp(-raw / 2048.0))));
  }
  const bool half = unit.sigmoid(fx::Value{0, fx::kUnitIn}).raw == kProbOne / 2;
  return {max_abs <= kSigmoidAbsBound && symmetric && saturated && half,
          fmt("max abs %.4f, f(x)+f(-x)=1 %s, f(0)=0.5 %s, f(x>=5)=1 %s", max_abs, symmetric ? "yes" : "no",
              half ? "yes" : "no", saturated ? "yes" : "no")};
}

Outcome layernorm_check() {
  const auto lut = units::DivLut::midpoint();
  double worst = 0.0;  // error in units of the allowed tolerance
  for (size_t d : {64u, 512u, 4096u}) {
    for (int t = 0; t < 5; ++t) {
      fx::Vec x{{}, fx::kAct9, static_cast<int>(oracle::uniform_int(-3, 3))};
      for (size_t i = 0; i < d; ++i) x.elems.push_back(static_cast<int32_t>(oracle::uniform_int(-255, 255)));
      const lnorm::LnConfig cfg{d};
      const auto r = lnorm::layernorm(x, cfg, lut);
      const auto want = oracle::two_pass_layernorm(x.to_real(), cfg.eps);
      const double ulp = std::ldexp(1.0, r.out.unit_exp());
      for (size_t i = 0; i < d; ++i)
        worst = std::max(worst, std::fabs(r.out.real(i) - want[i]) / (kLnDivRel * std::fabs(want[i]) + kLnUlps * ulp));
    }
  }
  bool zeros = true;
  for (int32_t c : {-200, 0, 1, 255}) {
    const fx::Vec x{std::vector<int32_t>(64, c), fx::kAct9, 2};
    zeros = zeros && lnorm::layernorm(x, lnorm::LnConfig{64}, lut).out.elems == std::vector<int32_t>(64, 0);
  }
  const int64_t cyc = atac_cycles(4096, 512);
  return {worst <= 1.0 && zeros && cyc == 17,
          fmt("worst error %.2f of tolerance, constant input -> zeros %s, cycles(4096, 512) = %lld", worst,
              zeros ? "yes" : "no", (long long)cyc)};
}

Outcome cycle_model() {
  const int64_t l = 4096;
  bool ok = true;
  std::string detail;
  for (int64_t d : {384, 512, 768, 1024}) {
    // Independent closed forms: (l + 4) per row pass, one pass per d rows.
    const int64_t passes = (l + d - 1) / d;
    ok = ok && matvec_cycles(l, l, d) == (l + 4) * passes && elementwise_cycles(l, d) == passes + 4;
  }
  const int64_t example = matvec_cycles(768, 768, 384);
  ok = ok && example == 1544;
  for (int64_t ll : {384, 768, 1000, 2048})
    for (int64_t d : {384, 512, 768, 1024})
      ok = ok && matvec_cycles(ll, ll, d) == (ll + 4) * ((ll + d - 1) / d) && elementwise_cycles(ll, d) == (ll + d - 1) / d + 4;
  detail = fmt("d in {384, 512, 768, 1024}; matvec(768, 384) = %lld", (long long)example);
  return {ok, detail};
}

Outcome wkv_equivalence() {
  double worst = 0.0;
  bool first_exact = true;
  for (int seq = 0; seq < 50; ++seq) {
    const size_t n = 8, T = 8;
    std::vector<double> w(n), u(n);
    for (size_t c = 0; c < n; ++c) {
      w[c] = oracle::uniform(0.01, 3.0);
      u[c] = oracle::normal();
    }
    std::vector<std::vector<double>> ks(n), vs(n);
    reference::WkvState st(n);
    for (size_t t = 1; t <= T; ++t) {
      std::vector<double> k(n), v(n);
      for (size_t c = 0; c < n; ++c) {
        k[c] = 3 * oracle::normal();
        v[c] = oracle::normal();
        ks[c].push_back(k[c]);
        vs[c].push_back(v[c]);
      }
      const auto out = reference::wkv_step(k, v, w, u, st);
      for (size_t c = 0; c < n; ++c) {
        const double want = oracle::wkv_direct(ks[c], vs[c], w[c], u[c], t);
        worst = std::max(worst, std::fabs(out[c] - want) / (std::fabs(want) + 1e-300));
        if (t == 1) first_exact = first_exact && out[c] == v[c];
      }
    }
  }
  return {worst <= kWkvRel && first_exact,
          fmt("worst rel %.2e over T <= 8, wkv_1 = v_1 %s", worst, first_exact ? "exact" : "inexact")};
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const model::Dims dims{2, 64, 256, 256};
  const auto fm = model::random_model(dims, 1);
  const auto qm = model::quantize_model(fm);
  const reference::FloatReference ref(fm);

  // Float model decodes greedily; the engine is fed the same tokens.
  std::vector<uint32_t> tokens{0};
  std::vector<std::vector<double>> want;
  auto fs = ref.new_state();
  for (int i = 0; i < kE2eSteps; ++i) {
    want.push_back(ref.forward_token(tokens.back(), fs));
    tokens.push_back(static_cast<uint32_t>(std::max_element(want.back().begin(), want.back().end()) - want.back().begin()));
  }

  auto run = [&](int threads) {
    engine::Hardware hw;
    hw.threads = threads;
    const engine::Engine e(qm, hw);
    auto s = e.new_state();
    std::vector<fx::Vec> out;
    for (int i = 0; i < kE2eSteps; ++i) out.push_back(e.forward_token(tokens[static_cast<size_t>(i)], s));
    return out;
  };
  const auto a = run(1);
  const auto b = run(1);
  const auto c = run(4);
  const bool identical = a == b && a == c;

  double min_cos = 1.0;
  int agree = 0;
  for (int i = 0; i < kE2eSteps; ++i) {
    const auto q = a[static_cast<size_t>(i)].to_real();
    min_cos = std::min(min_cos, oracle::cosine(q, want[static_cast<size_t>(i)]));
    const auto qa = std::max_element(q.begin(), q.end()) - q.begin();
    agree += static_cast<uint32_t>(qa) == tokens[static_cast<size_t>(i) + 1];
  }
  const double s = seconds_since(t0);
  const double rate = agree / double(kE2eSteps);
  const bool pass = min_cos >= kE2eCosine && rate >= kE2eArgmax && identical && s < kE2eSeconds;
  return {pass, fmt("min cosine %.4f, argmax %d/%d, bit-identical %s, %.1f s", min_cos, agree, kE2eSteps,
                    identical ? "yes" : "no", s)};
}

void put_le(std::vector<uint8_t>& b, size_t off, uint64_t v, int n) {
  for (int i = 0; i < n; ++i) b[off + static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
}

Outcome container() {
  const auto m = model::quantize_model(model::random_model(model::Dims{1, 8, 16, 16}, 1));
  const auto bytes = modelio::pack_model(m);
  const bool round_trip = modelio::pack_model(modelio::load_model(bytes)) == bytes;

  const auto info = modelio::read_directory(bytes);
  uint64_t header_end = info.header.dir_offset;
  for (const auto& e : info.entries) header_end = std::min(header_end, e.offset);
  const uint64_t dir = info.header.dir_offset;
  const uint64_t dir_len = bytes.size() - dir;

  int typed = 0, accepted = 0, untyped = 0;
  for (int i = 0; i < kFuzzCases; ++i) {
    auto b = bytes;
    const int edits = static_cast<int>(oracle::uniform_int(1, 6));
    for (int e = 0; e < edits; ++e) {
      const bool in_header = oracle::uniform_int(0, 2) == 0;
      const uint64_t pos = in_header ? static_cast<uint64_t>(oracle::uniform_int(0, static_cast<int64_t>(header_end) - 1))
                                     : dir + static_cast<uint64_t>(oracle::uniform_int(0, static_cast<int64_t>(dir_len) - 1));
      switch (oracle::uniform_int(0, 3)) {
        case 0: b[pos] ^= static_cast<uint8_t>(1u << oracle::uniform_int(0, 7)); break;
        case 1: b[pos] = static_cast<uint8_t>(oracle::uniform_int(0, 255)); break;
        case 2: b[pos] = 0xFF; break;
        default:
          if (pos + 8 <= b.size()) put_le(b, pos, static_cast<uint64_t>(oracle::uniform_int(0, INT64_MAX)), 8);
      }
    }
    if (oracle::uniform_int(0, 9) == 0) b.resize(static_cast<size_t>(oracle::uniform_int(0, static_cast<int64_t>(b.size()))));
    try {
      modelio::load_model(b);
      ++accepted;
    } catch (const modelio::ContainerError&) {
      ++typed;
    } catch (...) {
      ++untyped;
    }
  }
  return {round_trip && untyped == 0,
          fmt("round trip %s; %d mutants: %d typed errors, %d accepted, %d other", round_trip ? "identical" : "differs",
              kFuzzCases, typed, accepted, untyped)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"pmac-exhaustive", pmac_exactness}, {"worked-example", worked_example}, {"lod-exhaustive", lod_exhaustive},
      {"divu-sweep", divu_sweep},          {"exp-mode", exp_sweep},            {"sigmoid-mode", sigmoid_sweep},
      {"layernorm", layernorm_check},      {"cycle-model", cycle_model},       {"wkv-equivalence", wkv_equivalence},
      {"end-to-end", end_to_end},          {"container", container},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

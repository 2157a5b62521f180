#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hfrwkv/engine.hpp"
#include "hfrwkv/random_model.hpp"
#include "hfrwkv/reference.hpp"
#include "oracles.hpp"

using namespace hfrwkv;
using namespace hfrwkv::engine;

namespace {

const quant::DeltaPotConfig kCfg;

std::vector<double> normals(size_t n, double sigma = 1.0) {
  std::vector<double> v;
  for (size_t i = 0; i < n; ++i) v.push_back(sigma * oracle::normal());
  return v;
}

mvpa::PmacMatrix random_matrix(size_t rows, size_t cols) {
  return mvpa::PmacMatrix(quant::quantize_matrix(normals(rows * cols, 1.0 / std::sqrt(double(cols))), rows, cols, kCfg));
}

// Delta-PoT vector whose every entry decodes to `one ? 1 : 0`.
quant::DpotVector constant_mix(size_t n, bool one) {
  quant::DpotVector v{std::vector<quant::DeltaPotCode>(n), quant::TensorScale{1.0}, kCfg};
  if (one)
    for (auto& c : v.codes) c.deltas[0] = 1;
  return v;
}

fx::Vec act_from(const std::vector<double>& x) { return fx::quantize_block(x, fx::kAct9); }

std::vector<double> real_matvec(const mvpa::PmacMatrix& w, const std::vector<double>& x) {
  const auto d = w.weights().dequantize();
  std::vector<double> y(w.rows(), 0.0);
  for (size_t r = 0; r < w.rows(); ++r)
    for (size_t c = 0; c < w.cols(); ++c) y[r] += d[r * w.cols() + c] * x[c];
  return y;
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double e : v) m = std::max(m, std::fabs(e));
  return m;
}

struct Fixture {
  Hardware hw;
  StatusFlags flags;
  CycleLedger ledger;
  Context ctx{hw, flags, &ledger};
};

}  // namespace

TEST_CASE("reference WKV against the direct sum") {
  for (int seq = 0; seq < 20; ++seq) {
    const size_t n = 4, T = 8;
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
        CHECK(std::fabs(out[c] - want) <= 1e-5 * std::fabs(want) + 1e-12);
        if (t == 1) CHECK(out[c] == v[c]);
      }
    }
  }
}

TEST_CASE("reference WKV limits and guard invariance") {
  const size_t n = 3;
  const std::vector<double> big_w(n, 1e6), u(n, 0.3);
  // The i = t-1 term carries no decay, so an unbounded decay forgets all but
  // the current and the previous token.
  reference::WkvState st(n);
  std::vector<double> kp, vp;
  for (int t = 0; t < 5; ++t) {
    const auto k = normals(n), v = normals(n);
    const auto out = reference::wkv_step(k, v, big_w, u, st);
    for (size_t c = 0; c < n; ++c) {
      if (t == 0) {
        CHECK(out[c] == v[c]);
        continue;
      }
      const double a = std::exp(kp[c]), b = std::exp(u[c] + k[c]);
      CHECK(out[c] == doctest::Approx((a * vp[c] + b * v[c]) / (a + b)).epsilon(1e-12));
    }
    kp = k;
    vp = v;
  }

  const std::vector<double> w{0.2, 1.0, 2.5};
  reference::WkvState a(n), b(n);
  for (int t = 0; t < 8; ++t) {
    const auto k = normals(n, 4.0), v = normals(n);
    std::vector<double> k2 = k;
    for (auto& e : k2) e += 37.5;
    const auto ya = reference::wkv_step(k, v, w, u, a);
    const auto yb = reference::wkv_step(k2, v, w, u, b);
    for (size_t c = 0; c < n; ++c) CHECK(std::fabs(ya[c] - yb[c]) <= 1e-6 * std::fabs(ya[c]) + 1e-12);
  }
}

TEST_CASE("quantized WKV follows the float recurrence") {
  const size_t n = 16, T = 6;
  double worst = 0.0;
  for (int seq = 0; seq < 20; ++seq) {
    std::vector<double> wd(n), ud(n);
    for (size_t c = 0; c < n; ++c) {
      wd[c] = std::exp(oracle::uniform(-3.0, 1.5));
      ud[c] = 0.5 * oracle::normal();
    }
    const auto wq = quant::quantize_uniform9(wd, quant::ScaleMode::kPow2);
    const auto uq = quant::quantize_uniform9(ud, quant::ScaleMode::kPow2);
    const auto params = WkvParams::from(wq, uq);

    Fixture fx_;
    TimeMixState s(n);
    reference::WkvState ref(n);
    for (size_t t = 1; t <= T; ++t) {
      const fx::Vec k = fx::rescale(act_from(normals(n, 1.5)), fx::kInt16, 2);
      const fx::Vec v = fx::normalize(act_from(normals(n)), fx::kInt16);
      const auto q = wkv_step(k, v, params, s, fx_.ctx);
      const auto f = reference::wkv_step(k.to_real(), v.to_real(), wq.dequantize(), uq.dequantize(), ref);
      // The output is a convex combination of past v: compare against their range.
      const double scale = max_abs(v.to_real());
      for (size_t c = 0; c < n; ++c) {
        worst = std::max(worst, std::fabs(q.real(c) - f[c]) / scale);
        if (t == 1) CHECK(std::fabs(q.real(c) - v.real(c)) <= 0.0625 * std::fabs(v.real(c)) + std::ldexp(1.0, q.unit_exp()));
      }
    }
    CHECK_FALSE(fx_.flags.test(Flag::kDivByZero));
    CHECK(fx_.ledger.by_op().at("exp") == int64_t{4 * T} * complex_unit_cycles(n, kComplexUnits));
  }
  // Exp (3.5%) and divider (6.25%) errors on a convex combination.
  CHECK(worst <= 0.15);
  MESSAGE("max WKV deviation relative to |v|max: " << worst);
}

TEST_CASE("token shift") {
  const size_t n = 24;
  const auto w = random_matrix(16, n);
  auto x = act_from(normals(n));
  auto xp = act_from(normals(n));

  SUBCASE("mu = 1 projects the current token") {
    Fixture f;
    const auto y = token_shift(x, xp, MixPair{constant_mix(n, true), constant_mix(n, false)}, w, f.ctx);
    CHECK(y == mvpa::mv_mul(w, x, f.hw.mvpa).out);
    CHECK(f.ledger.reports().size() == 4);
  }
  SUBCASE("mu = 0 projects the previous token") {
    Fixture f;
    const auto y = token_shift(x, xp, MixPair{constant_mix(n, false), constant_mix(n, true)}, w, f.ctx);
    CHECK(y == mvpa::mv_mul(w, xp, f.hw.mvpa).out);
  }
  SUBCASE("random mu against the real interpolation") {
    for (int t = 0; t < 30; ++t) {
      std::vector<double> mu(n), comp(n);
      for (size_t i = 0; i < n; ++i) {
        mu[i] = oracle::uniform(0.05, 0.95);
        comp[i] = 1 - mu[i];
      }
      const MixPair mp{quant::quantize_dpot_vector(mu, kCfg), quant::quantize_dpot_vector(comp, kCfg)};
      Fixture f;
      const auto y = token_shift(x, xp, mp, w, f.ctx);
      const auto mq = mp.mu.dequantize(), cq = mp.comp.dequantize();
      std::vector<double> mix(n);
      for (size_t i = 0; i < n; ++i) mix[i] = mq[i] * x.real(i) + cq[i] * xp.real(i);
      const auto want = real_matvec(w, mix);
      // 9-bit rounding of the mix plus one truncation per product.
      const double mix_ulp = std::ldexp(1.0, fx::normalize(fx::quantize_block(mix, fx::kAct9), fx::kAct9).unit_exp());
      double row_l1 = 0;
      const auto wd = w.weights().dequantize();
      for (size_t r = 0; r < w.rows(); ++r) {
        double l1 = 0;
        for (size_t c = 0; c < n; ++c) l1 += std::fabs(wd[r * n + c]);
        row_l1 = std::max(row_l1, l1);
      }
      const double bound = row_l1 * mix_ulp + n * std::ldexp(1.0, y.unit_exp());
      for (size_t r = 0; r < w.rows(); ++r) CHECK(std::fabs(y.real(r) - want[r]) <= bound);
    }
  }
}

TEST_CASE("sigmoid gate stays in [0, 1]") {
  Fixture f;
  fx::Vec r{{}, fx::kInt16, 4};
  for (int i = -32768; i < 32768; i += 97) r.elems.push_back(i);
  const auto g = sigmoid_gate(r, f.ctx);
  for (size_t i = 0; i < g.size(); ++i) {
    CHECK(g.real(i) >= 0.0);
    CHECK(g.real(i) <= 1.0);
    CHECK(std::fabs(g.real(i) - 1.0 / (1.0 + std::exp(-r.real(i)))) <= 0.02);
  }
  CHECK(f.ledger.reports().back().op == "sigmoid");
}

TEST_CASE("time mixing of a zero input at the first token is zero") {
  const size_t n = 8;
  TimeMixWeights w;
  for (auto* m : {&w.k, &w.v, &w.r}) *m = MixPair{constant_mix(n, true), constant_mix(n, false)};
  const auto wd = quant::quantize_uniform9(std::vector<double>(n, 0.5), quant::ScaleMode::kPow2);
  const auto ud = quant::quantize_uniform9(std::vector<double>(n, 0.1), quant::ScaleMode::kPow2);
  w.wkv = WkvParams::from(wd, ud);
  w.wk = random_matrix(n, n);
  w.wv = random_matrix(n, n);
  w.wr = random_matrix(n, n);
  w.wo = random_matrix(n, n);
  Fixture f;
  TimeMixState s(n);
  const auto out = time_mixing(fx::Vec{std::vector<int32_t>(n, 0), fx::kAct9, 0}, w, s, f.ctx);
  CHECK(out.elems == std::vector<int32_t>(n, 0));
  CHECK(s.started);
}

TEST_CASE("channel mixing") {
  const size_t n = 16, hidden = 32;
  ChannelMixWeights w;
  w.k = MixPair{constant_mix(n, true), constant_mix(n, false)};
  w.r = MixPair{constant_mix(n, true), constant_mix(n, false)};
  w.wr = random_matrix(n, n);
  w.wv = random_matrix(n, hidden);

  SUBCASE("negative key paths give zero") {
    std::vector<double> neg(hidden * n);
    for (auto& e : neg) e = -std::fabs(oracle::normal()) - 0.1;
    w.wk = mvpa::PmacMatrix(quant::quantize_matrix(neg, hidden, n, kCfg));
    std::vector<double> xs(n);
    for (auto& e : xs) e = std::fabs(oracle::normal()) + 0.1;
    Fixture f;
    ChannelMixState s(n);
    const auto out = channel_mixing(act_from(xs), w, s, f.ctx);
    CHECK(out.elems == std::vector<int32_t>(n, 0));
  }

  SUBCASE("single token matches the stateless feedforward") {
    w.wk = random_matrix(hidden, n);
    for (int t = 0; t < 20; ++t) {
      Fixture f;
      ChannelMixState s(n);
      const auto x = act_from(normals(n));
      const auto out = channel_mixing(x, w, s, f.ctx);
      auto kk = real_matvec(w.wk, x.to_real());
      for (auto& e : kk) e = std::max(e, 0.0) * std::max(e, 0.0);
      const auto vv = real_matvec(w.wv, kk);
      const auto rr = real_matvec(w.wr, x.to_real());
      std::vector<double> want(n);
      for (size_t i = 0; i < n; ++i) want[i] = vv[i] / (1.0 + std::exp(-rr[i]));
      CHECK(oracle::cosine(out.to_real(), want) > 0.98);
      for (size_t i = 0; i < n; ++i) CHECK(std::fabs(out.real(i) - want[i]) <= 0.1 * max_abs(want) + 1e-9);
      CHECK(s.x_prev == x);
      for (double g : out.to_real()) CHECK(std::isfinite(g));
    }
  }
}

TEST_CASE("engine on a random model") {
  const model::Dims dims{2, 64, 256, 256};
  const auto fm = model::random_model(dims, 7);
  const auto qm = model::quantize_model(fm);
  const Engine eng(qm);
  const reference::FloatReference ref(fm);

  auto run = [&](int threads, std::vector<fx::Vec>* logits, CycleLedger* ledger) {
    Hardware hw;
    hw.threads = threads;
    const Engine e(qm, hw);
    auto s = e.new_state();
    for (uint32_t t : {1u, 5u, 200u, 42u, 42u, 0u, 255u, 17u}) logits->push_back(e.forward_token(t, s, ledger));
  };
  std::vector<fx::Vec> a, b, c;
  CycleLedger la;
  run(1, &a, &la);
  run(1, &b, nullptr);
  run(4, &c, nullptr);
  CHECK(a == b);
  CHECK(a == c);

  int64_t sum = 0;
  for (const auto& r : la.reports()) sum += r.cycles;
  CHECK(la.total() == sum);
  int64_t by_op = 0;
  for (const auto& [op, cyc] : la.by_op()) by_op += cyc;
  CHECK(by_op == sum);
  CHECK(la.by_op().at("layernorm") == 8 * 5 * atac_cycles(64, 512));

  auto qs = eng.new_state();
  auto fs = ref.new_state();
  for (uint32_t t : {3u, 9u, 27u, 81u, 243u}) {
    const auto q = eng.forward_token(t, qs).to_real();
    const auto f = ref.forward_token(t, fs);
    CHECK(oracle::cosine(q, f) >= 0.99);
  }
  CHECK_FALSE(qs.flags.test(Flag::kDivByZero));

  CHECK_THROWS_AS(eng.embed(256), ContractError);
}

TEST_CASE("tiny engine tracks the float reference") {
  const model::Dims dims{1, 4, 16, 8};
  const auto fm = model::random_model(dims, 3);
  const Engine eng(model::quantize_model(fm));
  const reference::FloatReference ref(fm);
  auto qs = eng.new_state();
  auto fs = ref.new_state();
  for (uint32_t t : {0u, 1u, 2u, 3u, 4u, 5u, 6u, 7u}) {
    const auto q = eng.forward_token(t, qs).to_real();
    const auto f = ref.forward_token(t, fs);
    CHECK(oracle::cosine(q, f) >= 0.9);
  }
}

TEST_CASE("thread count from the environment") {
  setenv("HFRWKV_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  setenv("HFRWKV_THREADS", "junk", 1);
  CHECK(threads_from_env() == 1);
  unsetenv("HFRWKV_THREADS");
  CHECK(threads_from_env() == 1);
}

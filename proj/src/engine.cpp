#include "hfrwkv/engine.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace hfrwkv::engine {

namespace {

using fx::Vec;

constexpr int kProbOne = 1 << fx::kProb.frac_bits;
// Q7.9 -> Q5.11 for the exp unit.
constexpr int kLogToUnit = fx::kUnitIn.frac_bits - fx::kLog.frac_bits;
// Arguments below -16 underflow to zero.
constexpr int32_t kExpFloor = -16 * (1 << fx::kLog.frac_bits);
constexpr int kMaxAlign = 40;

Vec zero_vec(size_t n, const fx::Format& fmt) {
  Vec v;
  v.fmt = fmt;
  v.elems.assign(n, 0);
  return v;
}

/// Vec whose unit exponent is `unit`.
Vec with_unit(const fx::Format& fmt, int unit, size_t n) {
  Vec v = zero_vec(n, fmt);
  v.scale_exp = unit + fmt.frac_bits;
  return v;
}

int32_t to_log(int32_t code, int gamma_log2, StatusFlags* flags) {
  const int s = gamma_log2 + fx::kLog.frac_bits;
  const int64_t raw = s >= 0 ? (int64_t{code} << std::min(s, 40)) : fx::shift_right_round(code, -s, fx::Rounding::kNearestEven);
  return fx::saturate(raw, fx::kLog, flags);
}

bool all_zero(std::span<const int64_t> v) {
  return std::all_of(v.begin(), v.end(), [](int64_t x) { return x == 0; });
}

/// a[i] * 2^ua + b[i] * 2^ub in wide integers at a shared unit, returned with
/// that unit.
std::pair<std::vector<int64_t>, int> aligned_sum(std::span<const int64_t> a, int ua, std::span<const int64_t> b,
                                                 int ub) {
  const bool za = all_zero(a);
  const bool zb = all_zero(b);
  int unit = std::min(ua, ub);
  if (za) unit = ub;
  if (zb) unit = ua;
  if (!za && !zb) unit = std::max(unit, std::max(ua, ub) - kMaxAlign);
  auto align = [unit](int64_t v, int from) {
    const int s = from - unit;
    return s >= 0 ? v * (int64_t{1} << s) : fx::shift_right_round(v, -s, fx::Rounding::kNearestEven);
  };
  std::vector<int64_t> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = (za ? 0 : align(a[i], ua)) + (zb ? 0 : align(b[i], ub));
  return {std::move(out), unit};
}

}  // namespace

WkvParams WkvParams::from(const quant::U9Vector& w, const quant::U9Vector& u, StatusFlags* flags) {
  if (w.size() != u.size()) throw ContractError("wkv: decay and bonus lengths differ");
  if (!w.scale.is_pow2() || !u.scale.is_pow2()) throw ContractError("wkv: decay and bonus need power-of-two scales");
  WkvParams p;
  for (int16_t c : w.codes) p.decay.push_back(to_log(c, w.scale.log2(), flags));
  for (int16_t c : u.codes) p.first.push_back(to_log(c, u.scale.log2(), flags));
  return p;
}

TimeMixState::TimeMixState(size_t n)
    : x_prev(zero_vec(n, fx::kAct9)),
      num(zero_vec(n, fx::kInt16)),
      den(zero_vec(n, fx::kInt16)),
      max_k(zero_vec(n, fx::kLog)) {}

ChannelMixState::ChannelMixState(size_t n) : x_prev(zero_vec(n, fx::kAct9)) {}

Vec token_shift(const Vec& x, const Vec& x_prev, const MixPair& mu, const mvpa::PmacMatrix& w, const Context& ctx) {
  const auto& cfg = ctx.hw.mvpa;
  const auto a = mvpa::ew_mul(x, mu.mu, cfg, units::kPmacProductShift, &ctx.flags);
  const auto b = mvpa::ew_mul(x_prev, mu.comp, cfg, units::kPmacProductShift, &ctx.flags);
  const auto s = mvpa::ew_add_aligned(a.out, b.out, fx::kAct9, cfg);
  auto y = mvpa::mv_mul(w, s.out, cfg, &ctx.flags, ctx.hw.threads);
  ctx.record(a.cycles);
  ctx.record(b.cycles);
  ctx.record(s.cycles);
  ctx.record(y.cycles);
  return std::move(y.out);
}

Vec sigmoid_gate(const Vec& r, const Context& ctx) {
  // The sigmoid is flat beyond +-5, so clamping the Q5.11 input is lossless.
  const Vec in = fx::rescale(r, fx::kUnitIn, 0);
  Vec out = with_unit(fx::kProb, -fx::kProb.frac_bits, r.size());
  for (size_t i = 0; i < r.size(); ++i) out.elems[i] = ctx.hw.exp_sigma.sigmoid(in.at(i)).raw;
  const auto n = static_cast<int64_t>(r.size());
  ctx.record(CycleReport{"sigmoid", n, kComplexUnits, complex_unit_cycles(n, kComplexUnits)});
  return out;
}

Vec wkv_step(const Vec& k, const Vec& v, const WkvParams& p, TimeMixState& s, const Context& ctx) {
  const size_t n = k.size();
  if (v.size() != n || p.decay.size() != n || p.first.size() != n || s.num.size() != n) {
    throw ContractError("wkv_step: length mismatch");
  }
  if (!(k.fmt == fx::kInt16) || !(v.fmt == fx::kInt16)) throw ContractError("wkv_step: k and v must be 16-bit");
  StatusFlags& flags = ctx.flags;
  const auto& unit = ctx.hw.exp_sigma;

  auto exp_nonpos = [&](int64_t diff) -> int32_t {
    if (diff < kExpFloor) return 0;
    const fx::Value arg{static_cast<int32_t>(diff * (1 << kLogToUnit)), fx::kUnitIn};
    return unit.exp(arg, fx::kProb, &flags).raw;
  };

  // k in the log domain, unit 2^-9.
  const Vec kl = fx::rescale(k, fx::kLog, 0, fx::Rounding::kNearestEven, &flags);

  std::vector<int32_t> e1(n), e2(n), f1(n), f2(n), p2(n);
  for (size_t i = 0; i < n; ++i) {
    const int32_t ww = fx::saturate(int64_t{p.first[i]} + kl.elems[i], fx::kLog, &flags);
    if (s.started) {
      const int32_t pp = s.max_k.elems[i];
      const int32_t mx = std::max(pp, ww);
      e1[i] = exp_nonpos(int64_t{pp} - mx);
      e2[i] = exp_nonpos(int64_t{ww} - mx);
      const int64_t decayed = int64_t{pp} - p.decay[i];
      const int64_t mx2 = std::max<int64_t>(decayed, kl.elems[i]);
      f1[i] = exp_nonpos(decayed - mx2);
      f2[i] = exp_nonpos(int64_t{kl.elems[i]} - mx2);
      p2[i] = fx::saturate(mx2, fx::kLog, &flags);
    } else {
      e1[i] = 0;
      e2[i] = kProbOne;
      f1[i] = 0;
      f2[i] = kProbOne;
      p2[i] = kl.elems[i];
    }
  }

  // c1 * num + c2 * v, normalized to a 16-bit block.
  auto combine_num = [&](const std::vector<int32_t>& c1, const std::vector<int32_t>& c2) {
    std::vector<int64_t> ta(n), tb(n);
    for (size_t i = 0; i < n; ++i) {
      ta[i] = int64_t{c1[i]} * s.num.elems[i];
      tb[i] = int64_t{c2[i]} * v.elems[i];
    }
    auto [wide, u] = aligned_sum(ta, s.num.unit_exp() - fx::kProb.frac_bits, tb, v.unit_exp() - fx::kProb.frac_bits);
    return fx::normalize(wide, u, fx::kInt16);
  };
  // c1 * den + c2 in the denominator format (8 fraction bits).
  auto combine_den = [&](const std::vector<int32_t>& c1, const std::vector<int32_t>& c2) {
    constexpr int kDenFrac = fx::kInt16.frac_bits;
    Vec out = with_unit(fx::kInt16, -kDenFrac, n);
    for (size_t i = 0; i < n; ++i) {
      const int64_t wide = int64_t{c1[i]} * s.den.elems[i] + (int64_t{c2[i]} << kDenFrac);
      out.elems[i] = fx::saturate(fx::shift_right_round(wide, fx::kProb.frac_bits, fx::Rounding::kNearestEven),
                                  fx::kInt16, &flags);
    }
    return out;
  };

  const Vec num = combine_num(e1, e2);
  const Vec den = combine_den(e1, e2);

  // Sign-separated division through the LUT divider.
  constexpr fx::Format kNumPort{16, 0, false};
  constexpr fx::Format kQuotient{24, 8, false};
  const fx::Format den_port{16, fx::kInt16.frac_bits, false};
  std::vector<int64_t> q(n);
  for (size_t i = 0; i < n; ++i) {
    q[i] = units::signed_div(fx::Value{num.elems[i], kNumPort}, fx::Value{den.elems[i], den_port}, kQuotient,
                             ctx.hw.div, &flags)
               .raw;
  }
  Vec wkv = fx::normalize(q, num.unit_exp() - kQuotient.frac_bits, fx::kInt16);

  s.num = combine_num(f1, f2);
  s.den = combine_den(f1, f2);
  s.max_k.elems = p2;
  s.started = true;

  const auto len = static_cast<int64_t>(n);
  const int64_t lanes = ctx.hw.mvpa.lanes;
  for (int i = 0; i < 4; ++i) ctx.record(CycleReport{"exp", len, kComplexUnits, complex_unit_cycles(len, kComplexUnits)});
  ctx.record(CycleReport{"div", len, kComplexUnits, complex_unit_cycles(len, kComplexUnits)});
  for (int i = 0; i < 6; ++i) ctx.record(CycleReport{"ew_mul", len, lanes, elementwise_cycles(len, lanes)});
  for (int i = 0; i < 4; ++i) ctx.record(CycleReport{"ew_add", len, lanes, elementwise_cycles(len, lanes)});
  return wkv;
}

Vec time_mixing(const Vec& x, const TimeMixWeights& w, TimeMixState& s, const Context& ctx) {
  const Vec k = token_shift(x, s.x_prev, w.k, w.wk, ctx);
  const Vec v = token_shift(x, s.x_prev, w.v, w.wv, ctx);
  const Vec r = token_shift(x, s.x_prev, w.r, w.wr, ctx);
  s.x_prev = x;

  const Vec gate = sigmoid_gate(r, ctx);
  const Vec wkv = wkv_step(k, v, w.wkv, s, ctx);
  const auto g = mvpa::ew_mul(gate, wkv, ctx.hw.mvpa);
  ctx.record(g.cycles);
  auto out = mvpa::mv_mul(w.wo, fx::normalize(g.out, fx::kAct9), ctx.hw.mvpa, &ctx.flags, ctx.hw.threads);
  ctx.record(out.cycles);
  return std::move(out.out);
}

Vec channel_mixing(const Vec& x, const ChannelMixWeights& w, ChannelMixState& s, const Context& ctx) {
  const Vec kk = token_shift(x, s.x_prev, w.k, w.wk, ctx);
  const Vec rr = token_shift(x, s.x_prev, w.r, w.wr, ctx);
  s.x_prev = x;

  // Squared ReLU on the 9-bit code: exact 18-bit square, then renormalized.
  const Vec k9 = fx::normalize(kk, fx::kAct9);
  std::vector<int64_t> sq(k9.size());
  for (size_t i = 0; i < k9.size(); ++i) {
    const int64_t c = std::max(k9.elems[i], 0);
    sq[i] = c * c;
  }
  const Vec hidden = fx::normalize(sq, 2 * k9.unit_exp(), fx::kAct9);
  const auto len = static_cast<int64_t>(k9.size());
  ctx.record(CycleReport{"ew_mul", len, ctx.hw.mvpa.lanes, elementwise_cycles(len, ctx.hw.mvpa.lanes)});

  const auto vv = mvpa::mv_mul(w.wv, hidden, ctx.hw.mvpa, &ctx.flags, ctx.hw.threads);
  ctx.record(vv.cycles);
  const Vec gate = sigmoid_gate(rr, ctx);
  auto out = mvpa::ew_mul(gate, vv.out, ctx.hw.mvpa);
  ctx.record(out.cycles);
  return std::move(out.out);
}

int threads_from_env() {
  const char* v = std::getenv("HFRWKV_THREADS");
  if (!v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception&) {
    return 1;
  }
}

namespace {

MixPair mix_pair(const model::QuantModel& m, size_t layer, const std::string& module, const std::string& c) {
  return MixPair{m.mix(model::block_name(layer, module + ".time_mix_" + c)),
                 m.mix(model::block_name(layer, module + ".one_minus_time_mix_" + c))};
}

lnorm::LnConfig ln_config(const model::QuantModel& m, const std::string& prefix, const Hardware& hw) {
  lnorm::LnConfig c;
  c.dim = m.dims.hidden;
  c.tree_par = hw.tree_par;
  c.eps = hw.ln_eps;
  c.gain = m.u9(prefix + ".weight");
  c.bias = m.u9(prefix + ".bias");
  c.validate();
  return c;
}

}  // namespace

Engine::Engine(const model::QuantModel& m, Hardware hw) : dims_(m.dims), hw_(std::move(hw)) {
  m.validate();
  hw_.mvpa.validate();
  if (hw_.tree_par <= 0) throw ContractError("engine: tree parallelism must be positive");
  emb_ = m.u9("emb.weight");
  if (!emb_.scale.is_pow2()) throw ContractError("engine: embedding needs a power-of-two scale");
  StatusFlags load_flags;
  for (size_t i = 0; i < dims_.n_layers; ++i) {
    auto name = [i](const std::string& part) { return model::block_name(i, part); };
    BlockWeights b;
    b.ln1 = ln_config(m, name("ln1"), hw_);
    b.ln2 = ln_config(m, name("ln2"), hw_);
    b.att.k = mix_pair(m, i, "att", "k");
    b.att.v = mix_pair(m, i, "att", "v");
    b.att.r = mix_pair(m, i, "att", "r");
    b.att.wkv = WkvParams::from(m.u9(name("att.time_decay")), m.u9(name("att.time_first")), &load_flags);
    b.att.wk = mvpa::PmacMatrix(m.matrix(name("att.key.weight")));
    b.att.wv = mvpa::PmacMatrix(m.matrix(name("att.value.weight")));
    b.att.wr = mvpa::PmacMatrix(m.matrix(name("att.receptance.weight")));
    b.att.wo = mvpa::PmacMatrix(m.matrix(name("att.output.weight")));
    b.ffn.k = mix_pair(m, i, "ffn", "k");
    b.ffn.r = mix_pair(m, i, "ffn", "r");
    b.ffn.wk = mvpa::PmacMatrix(m.matrix(name("ffn.key.weight")));
    b.ffn.wr = mvpa::PmacMatrix(m.matrix(name("ffn.receptance.weight")));
    b.ffn.wv = mvpa::PmacMatrix(m.matrix(name("ffn.value.weight")));
    blocks_.push_back(std::move(b));
  }
  if (load_flags.any()) throw ContractError("engine: decay or bonus does not fit the log-domain format");
  ln_out_ = ln_config(m, "ln_out", hw_);
  head_ = mvpa::PmacMatrix(m.matrix("head.weight"));
}

State Engine::new_state() const {
  State s;
  for (size_t i = 0; i < dims_.n_layers; ++i) s.layers.push_back(LayerState{TimeMixState(dims_.hidden), ChannelMixState(dims_.hidden)});
  return s;
}

Vec Engine::embed(uint32_t token) const {
  if (token >= dims_.vocab) throw ContractError("token id out of vocabulary range");
  const size_t d = dims_.hidden;
  Vec x;
  x.fmt = fx::kAct9;
  x.scale_exp = emb_.scale.log2() + fx::kAct9.frac_bits;
  x.elems.assign(emb_.codes.begin() + static_cast<std::ptrdiff_t>(token * d),
                 emb_.codes.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
  return x;
}

Vec Engine::forward_hidden(uint32_t token, State& s, CycleLedger* ledger) const {
  if (s.layers.size() != dims_.n_layers) throw ContractError("state does not match model depth");
  const Context ctx{hw_, s.flags, ledger};
  Vec x = embed(token);
  for (size_t i = 0; i < dims_.n_layers; ++i) {
    const auto& b = blocks_[i];
    auto& ls = s.layers[i];
    const auto n1 = lnorm::layernorm(x, b.ln1, hw_.div, &s.flags);
    ctx.record(n1.cycles);
    const Vec a = time_mixing(n1.out, b.att, ls.att, ctx);
    auto r1 = mvpa::ew_add_aligned(x, a, fx::kAct9, hw_.mvpa);
    ctx.record(r1.cycles);
    x = std::move(r1.out);

    const auto n2 = lnorm::layernorm(x, b.ln2, hw_.div, &s.flags);
    ctx.record(n2.cycles);
    const Vec c = channel_mixing(n2.out, b.ffn, ls.ffn, ctx);
    auto r2 = mvpa::ew_add_aligned(x, c, fx::kAct9, hw_.mvpa);
    ctx.record(r2.cycles);
    x = std::move(r2.out);
  }
  auto out = lnorm::layernorm(x, ln_out_, hw_.div, &s.flags);
  ctx.record(out.cycles);
  return std::move(out.out);
}

Vec Engine::forward_token(uint32_t token, State& s, CycleLedger* ledger) const {
  const Vec h = forward_hidden(token, s, ledger);
  auto logits = mvpa::mv_mul(head_, h, hw_.mvpa, &s.flags, hw_.threads);
  if (ledger) ledger->add(logits.cycles);
  return std::move(logits.out);
}

}  // namespace hfrwkv::engine

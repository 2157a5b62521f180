#pragma once

#include <cstdint>
#include <vector>

#include "hfrwkv/cycles.hpp"
#include "hfrwkv/fxp.hpp"
#include "hfrwkv/lnorm.hpp"
#include "hfrwkv/model.hpp"
#include "hfrwkv/mvpa.hpp"
#include "hfrwkv/quant.hpp"
#include "hfrwkv/status.hpp"
#include "hfrwkv/units.hpp"

// Quantized RWKV-4 inference over the unit models.
//
// Activations between units are 9-bit block-floating-point vectors; matrix
// outputs, WKV state and gates stay 16-bit. The WKV recurrence keeps its
// numerator and denominator relative to a per-channel running maximum of the
// exponent (Q7.9), so every exp argument is <= 0.

namespace hfrwkv::engine {

struct Hardware {
  mvpa::MvpaConfig mvpa{};
  int tree_par = lnorm::kDefaultTreePar;
  /// Row-parallel workers for matrix-vector products (values never change).
  int threads = 1;
  double ln_eps = 1.0 / 1024.0;
  units::DivLut div = units::DivLut::midpoint();
  units::ExpSigmaUnit exp_sigma{};
};

/// Per-call evaluation context: hardware, sticky flags and cycle sink.
struct Context {
  const Hardware& hw;
  StatusFlags& flags;
  CycleLedger* ledger = nullptr;

  void record(const CycleReport& r) const {
    if (ledger) ledger->add(r);
  }
};

struct MixPair {
  quant::DpotVector mu;
  quant::DpotVector comp;  // 1 - mu, stored separately
};

/// Decay w' (positive) and bonus u in Q7.9 raw codes.
struct WkvParams {
  std::vector<int32_t> decay;
  std::vector<int32_t> first;

  static WkvParams from(const quant::U9Vector& w, const quant::U9Vector& u, StatusFlags* flags = nullptr);
};

struct TimeMixWeights {
  MixPair k, v, r;
  WkvParams wkv;
  mvpa::PmacMatrix wk, wv, wr, wo;
};

struct ChannelMixWeights {
  MixPair k, r;
  mvpa::PmacMatrix wk, wr, wv;
};

struct BlockWeights {
  lnorm::LnConfig ln1, ln2;
  TimeMixWeights att;
  ChannelMixWeights ffn;
};

struct TimeMixState {
  fx::Vec x_prev;  // kAct9
  fx::Vec num;     // kInt16, block exponent
  fx::Vec den;     // kInt16 with 8 fraction bits, >= 1 once started
  fx::Vec max_k;   // kLog
  bool started = false;

  explicit TimeMixState(size_t n = 0);
};

struct ChannelMixState {
  fx::Vec x_prev;

  explicit ChannelMixState(size_t n = 0);
};

struct LayerState {
  TimeMixState att;
  ChannelMixState ffn;
};

struct State {
  std::vector<LayerState> layers;
  StatusFlags flags;
};

/// Token-shift interpolation followed by the projection:
/// W (mu * x + (1 - mu) * x_prev). Returns kInt16.
fx::Vec token_shift(const fx::Vec& x, const fx::Vec& x_prev, const MixPair& mu, const mvpa::PmacMatrix& w,
                    const Context& ctx);

/// Piecewise-linear sigmoid of a 16-bit vector; result in kProb.
fx::Vec sigmoid_gate(const fx::Vec& r, const Context& ctx);

/// One recurrent WKV step; k and v are kInt16, the result is kInt16.
fx::Vec wkv_step(const fx::Vec& k, const fx::Vec& v, const WkvParams& p, TimeMixState& s, const Context& ctx);

/// x is LayerNorm output (kAct9); result is kInt16 without the residual.
fx::Vec time_mixing(const fx::Vec& x, const TimeMixWeights& w, TimeMixState& s, const Context& ctx);
fx::Vec channel_mixing(const fx::Vec& x, const ChannelMixWeights& w, ChannelMixState& s, const Context& ctx);

/// Worker count from HFRWKV_THREADS (default 1).
int threads_from_env();

class Engine {
 public:
  explicit Engine(const model::QuantModel& m, Hardware hw = {});

  const model::Dims& dims() const { return dims_; }
  const Hardware& hardware() const { return hw_; }
  const std::vector<BlockWeights>& blocks() const { return blocks_; }

  State new_state() const;
  /// Embedding row as a 9-bit vector.
  fx::Vec embed(uint32_t token) const;
  /// Final LayerNorm output; advances the state.
  fx::Vec forward_hidden(uint32_t token, State& s, CycleLedger* ledger = nullptr) const;
  /// Head logits (kInt16); advances the state.
  fx::Vec forward_token(uint32_t token, State& s, CycleLedger* ledger = nullptr) const;

 private:
  model::Dims dims_;
  Hardware hw_;
  quant::U9Vector emb_;
  std::vector<BlockWeights> blocks_;
  lnorm::LnConfig ln_out_;
  mvpa::PmacMatrix head_;
};

}  // namespace hfrwkv::engine

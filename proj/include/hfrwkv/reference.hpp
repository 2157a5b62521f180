#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hfrwkv/model.hpp"

// Double-precision RWKV-4 forward pass with exact exp, sigmoid and division.

namespace hfrwkv::reference {

/// Log-domain WKV state: numerator aa and denominator bb are stored divided
/// by e^pp.
struct WkvState {
  std::vector<double> aa, bb, pp;

  WkvState() = default;
  explicit WkvState(size_t n);
};

/// One WKV step with decay e^-w (w > 0) and bonus u; every exponent is taken
/// relative to the running maximum.
std::vector<double> wkv_step(std::span<const double> k, std::span<const double> v, std::span<const double> w,
                             std::span<const double> u, WkvState& state);

std::vector<double> layernorm(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                              double eps);

struct LayerState {
  std::vector<double> att_x;
  std::vector<double> ffn_x;
  WkvState wkv;
};

struct State {
  std::vector<LayerState> layers;
};

class FloatReference {
 public:
  static constexpr double kDefaultLnEps = 1e-5;

  explicit FloatReference(model::FloatModel m, double ln_eps = kDefaultLnEps);

  const model::Dims& dims() const { return m_.dims; }
  State new_state() const;
  /// Logits for one token; advances `s`.
  std::vector<double> forward_token(uint32_t token, State& s) const;

 private:
  std::vector<double> time_mixing(size_t layer, std::span<const double> x, LayerState& s) const;
  std::vector<double> channel_mixing(size_t layer, std::span<const double> x, LayerState& s) const;
  std::vector<double> matvec(const std::string& name, std::span<const double> x) const;
  std::span<const double> vec(const std::string& name) const;

  model::FloatModel m_;
  double eps_;
};

}  // namespace hfrwkv::reference

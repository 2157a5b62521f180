#include "hfrwkv/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hfrwkv/status.hpp"

namespace hfrwkv::reference {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> mix(std::span<const double> x, std::span<const double> prev, std::span<const double> mu) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = mu[i] * x[i] + (1.0 - mu[i]) * prev[i];
  return out;
}

}  // namespace

WkvState::WkvState(size_t n) : aa(n, 0.0), bb(n, 0.0), pp(n, -std::numeric_limits<double>::infinity()) {}

std::vector<double> wkv_step(std::span<const double> k, std::span<const double> v, std::span<const double> w,
                             std::span<const double> u, WkvState& s) {
  const size_t n = k.size();
  if (v.size() != n || w.size() != n || u.size() != n || s.aa.size() != n) {
    throw ContractError("wkv_step: length mismatch");
  }
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double ww = u[i] + k[i];
    const double p = std::max(s.pp[i], ww);
    const double e1 = std::exp(s.pp[i] - p);
    const double e2 = std::exp(ww - p);
    out[i] = (e1 * s.aa[i] + e2 * v[i]) / (e1 * s.bb[i] + e2);

    const double decayed = s.pp[i] - w[i];
    const double p2 = std::max(decayed, k[i]);
    const double f1 = std::exp(decayed - p2);
    const double f2 = std::exp(k[i] - p2);
    s.aa[i] = f1 * s.aa[i] + f2 * v[i];
    s.bb[i] = f1 * s.bb[i] + f2;
    s.pp[i] = p2;
  }
  return out;
}

std::vector<double> layernorm(std::span<const double> x, std::span<const double> gain, std::span<const double> bias,
                              double eps) {
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

FloatReference::FloatReference(model::FloatModel m, double ln_eps) : m_(std::move(m)), eps_(ln_eps) {
  m_.validate();
}

State FloatReference::new_state() const {
  State s;
  const size_t d = m_.dims.hidden;
  for (size_t i = 0; i < m_.dims.n_layers; ++i) {
    s.layers.push_back(LayerState{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), WkvState(d)});
  }
  return s;
}

std::span<const double> FloatReference::vec(const std::string& name) const { return m_.at(name).data; }

std::vector<double> FloatReference::matvec(const std::string& name, std::span<const double> x) const {
  const auto& t = m_.at(name);
  const size_t rows = t.shape[0];
  const size_t cols = t.shape[1];
  std::vector<double> out(rows, 0.0);
  for (size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (size_t c = 0; c < cols; ++c) acc += t.data[r * cols + c] * x[c];
    out[r] = acc;
  }
  return out;
}

std::vector<double> FloatReference::time_mixing(size_t layer, std::span<const double> x, LayerState& s) const {
  auto name = [layer](const char* part) { return model::block_name(layer, part); };
  const auto xk = mix(x, s.att_x, vec(name("att.time_mix_k")));
  const auto xv = mix(x, s.att_x, vec(name("att.time_mix_v")));
  const auto xr = mix(x, s.att_x, vec(name("att.time_mix_r")));
  s.att_x.assign(x.begin(), x.end());

  auto r = matvec(name("att.receptance.weight"), xr);
  const auto k = matvec(name("att.key.weight"), xk);
  const auto v = matvec(name("att.value.weight"), xv);
  const auto wkv = wkv_step(k, v, vec(name("att.time_decay")), vec(name("att.time_first")), s.wkv);
  for (size_t i = 0; i < r.size(); ++i) r[i] = sigmoid(r[i]) * wkv[i];
  return matvec(name("att.output.weight"), r);
}

std::vector<double> FloatReference::channel_mixing(size_t layer, std::span<const double> x, LayerState& s) const {
  auto name = [layer](const char* part) { return model::block_name(layer, part); };
  const auto xk = mix(x, s.ffn_x, vec(name("ffn.time_mix_k")));
  const auto xr = mix(x, s.ffn_x, vec(name("ffn.time_mix_r")));
  s.ffn_x.assign(x.begin(), x.end());

  auto k = matvec(name("ffn.key.weight"), xk);
  for (double& v : k) v = v > 0.0 ? v * v : 0.0;
  auto out = matvec(name("ffn.value.weight"), k);
  const auto r = matvec(name("ffn.receptance.weight"), xr);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= sigmoid(r[i]);
  return out;
}

std::vector<double> FloatReference::forward_token(uint32_t token, State& s) const {
  if (token >= m_.dims.vocab) throw ContractError("token id out of vocabulary range");
  if (s.layers.size() != m_.dims.n_layers) throw ContractError("state does not match model depth");
  const size_t d = m_.dims.hidden;
  const auto& emb = m_.at("emb.weight").data;
  std::vector<double> x(emb.begin() + static_cast<std::ptrdiff_t>(token * d),
                        emb.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
  for (size_t i = 0; i < m_.dims.n_layers; ++i) {
    auto name = [i](const char* part) { return model::block_name(i, part); };
    const auto a = time_mixing(i, layernorm(x, vec(name("ln1.weight")), vec(name("ln1.bias")), eps_), s.layers[i]);
    for (size_t j = 0; j < d; ++j) x[j] += a[j];
    const auto f = channel_mixing(i, layernorm(x, vec(name("ln2.weight")), vec(name("ln2.bias")), eps_), s.layers[i]);
    for (size_t j = 0; j < d; ++j) x[j] += f[j];
  }
  return matvec("head.weight", layernorm(x, vec("ln_out.weight"), vec("ln_out.bias"), eps_));
}

}  // namespace hfrwkv::reference

#include "hfrwkv/random_model.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "hfrwkv/reference.hpp"

namespace hfrwkv::model {

namespace {

// mt19937_64 output is fully specified; the conversions below are spelled out
// so the weights do not depend on the standard library's distributions.
class Source {
 public:
  explicit Source(uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace

FloatModel random_model(const Dims& dims, uint64_t seed) {
  Source rng(seed);
  FloatModel m;
  m.dims = dims;
  const size_t d = dims.hidden;
  for (const auto& spec : tensor_schema(dims)) {
    FloatTensor t;
    t.shape = spec.shape;
    t.data.resize(spec.numel());
    m.tensors.emplace(spec.name, std::move(t));
  }
  auto fill = [&](const std::string& name, auto&& gen) {
    auto& data = m.tensors.at(name).data;
    for (size_t i = 0; i < data.size(); ++i) data[i] = gen(i);
  };
  auto normal = [&](double sd) { return [&rng, sd](size_t) { return sd * rng.normal(); }; };

  // Embedding rows come out of a LayerNorm with unit gain.
  fill("emb.weight", normal(1.0));
  {
    auto& e = m.tensors.at("emb.weight").data;
    const std::vector<double> ones(d, 1.0), zeros(d, 0.0);
    for (size_t r = 0; r < dims.vocab; ++r) {
      std::span<double> row(e.data() + r * d, d);
      const auto n = reference::layernorm(row, ones, zeros, 1e-5);
      std::copy(n.begin(), n.end(), row.begin());
    }
  }

  for (size_t l = 0; l < dims.n_layers; ++l) {
    auto name = [l](const std::string& part) { return block_name(l, part); };
    for (const char* ln : {"ln1", "ln2"}) {
      fill(name(std::string(ln) + ".weight"), [&](size_t) { return 1.0 + 0.1 * rng.normal(); });
      fill(name(std::string(ln) + ".bias"), normal(0.05));
    }
    auto mix_pair = [&](const std::string& module, const std::string& c) {
      const auto mu_name = name(module + ".time_mix_" + c);
      fill(mu_name, [&](size_t) { return 0.2 + 0.8 * rng.uniform(); });
      const auto& mu = m.tensors.at(mu_name).data;
      fill(name(module + ".one_minus_time_mix_" + c), [&](size_t i) { return 1.0 - mu[i]; });
    };
    for (const char* c : {"k", "v", "r"}) mix_pair("att", c);
    for (const char* c : {"k", "r"}) mix_pair("ffn", c);

    const double denom = d > 1 ? static_cast<double>(d - 1) : 1.0;
    fill(name("att.time_decay"), [&](size_t i) { return std::exp(-3.0 + 4.5 * static_cast<double>(i) / denom); });
    fill(name("att.time_first"), normal(0.5));

    const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double sd_f = 1.0 / std::sqrt(static_cast<double>(dims.ffn));
    for (const char* w : {"att.key.weight", "att.value.weight", "att.receptance.weight", "att.output.weight",
                          "ffn.key.weight", "ffn.receptance.weight"}) {
      fill(name(w), normal(sd_d));
    }
    fill(name("ffn.value.weight"), normal(sd_f));
  }
  fill("ln_out.weight", [&](size_t) { return 1.0 + 0.1 * rng.normal(); });
  fill("ln_out.bias", normal(0.05));
  fill("head.weight", normal(2.0 / std::sqrt(static_cast<double>(d))));
  return m;
}

}  // namespace hfrwkv::model

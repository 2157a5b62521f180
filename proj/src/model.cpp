#include "hfrwkv/model.hpp"

#include <cmath>
#include <functional>

#include "hfrwkv/status.hpp"

namespace hfrwkv::model {

void Dims::validate() const {
  if (n_layers == 0 || hidden == 0 || ffn == 0 || vocab == 0) throw ContractError("model dims must be positive");
}

Encoding encoding_for(TensorKind kind) {
  return (kind == TensorKind::kMatrix || kind == TensorKind::kMix) ? Encoding::kDpot : Encoding::kU9;
}

std::string_view encoding_name(Encoding e) {
  switch (e) {
    case Encoding::kDpot: return "dpot";
    case Encoding::kU9: return "u9";
    case Encoding::kFx16: return "fx16";
  }
  return "?";
}

size_t TensorSpec::numel() const {
  size_t n = 1;
  for (uint32_t s : shape) n *= s;
  return n;
}

std::string block_name(size_t layer, std::string_view part) {
  return "blocks." + std::to_string(layer) + "." + std::string(part);
}

uint64_t schema_size(const Dims& dims) {
  constexpr uint64_t kPerLayer = 23;
  return 4 + kPerLayer * dims.n_layers;
}

std::vector<TensorSpec> tensor_schema(const Dims& dims) {
  dims.validate();
  const uint32_t d = dims.hidden;
  const uint32_t f = dims.ffn;
  std::vector<TensorSpec> s;
  s.push_back({"emb.weight", TensorKind::kEmbedding, {dims.vocab, d}});
  for (size_t i = 0; i < dims.n_layers; ++i) {
    auto add = [&](std::string_view part, TensorKind kind, std::vector<uint32_t> shape) {
      s.push_back({block_name(i, part), kind, std::move(shape)});
    };
    for (const char* ln : {"ln1", "ln2"}) {
      add(std::string(ln) + ".weight", TensorKind::kAdditive, {d});
      add(std::string(ln) + ".bias", TensorKind::kAdditive, {d});
    }
    for (const char* c : {"k", "v", "r"}) {
      add(std::string("att.time_mix_") + c, TensorKind::kMix, {d});
      add(std::string("att.one_minus_time_mix_") + c, TensorKind::kMix, {d});
    }
    add("att.time_decay", TensorKind::kAdditive, {d});
    add("att.time_first", TensorKind::kAdditive, {d});
    for (const char* m : {"key", "value", "receptance", "output"}) {
      add(std::string("att.") + m + ".weight", TensorKind::kMatrix, {d, d});
    }
    for (const char* c : {"k", "r"}) {
      add(std::string("ffn.time_mix_") + c, TensorKind::kMix, {d});
      add(std::string("ffn.one_minus_time_mix_") + c, TensorKind::kMix, {d});
    }
    add("ffn.key.weight", TensorKind::kMatrix, {f, d});
    add("ffn.receptance.weight", TensorKind::kMatrix, {d, d});
    add("ffn.value.weight", TensorKind::kMatrix, {d, f});
  }
  s.push_back({"ln_out.weight", TensorKind::kAdditive, {d}});
  s.push_back({"ln_out.bias", TensorKind::kAdditive, {d}});
  s.push_back({"head.weight", TensorKind::kMatrix, {dims.vocab, d}});
  return s;
}

const FloatTensor& FloatModel::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing tensor: " + name);
  return it->second;
}

void FloatModel::validate() const {
  for (const auto& spec : tensor_schema(dims)) {
    const auto& t = at(spec.name);
    if (t.shape != spec.shape || t.data.size() != spec.numel()) throw ContractError("shape mismatch: " + spec.name);
  }
}

Encoding QTensor::encoding() const {
  switch (data.index()) {
    case 0:
    case 1: return Encoding::kDpot;
    case 2: return Encoding::kU9;
    default: return Encoding::kFx16;
  }
}

size_t QTensor::numel() const {
  return std::visit(
      [](const auto& t) -> size_t {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Fx16Tensor>) {
          return t.raw.size();
        } else {
          return t.codes.size();
        }
      },
      data);
}

std::vector<double> QTensor::dequantize() const {
  return std::visit(
      [](const auto& t) -> std::vector<double> {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Fx16Tensor>) {
          std::vector<double> out(t.raw.size());
          for (size_t i = 0; i < t.raw.size(); ++i) out[i] = std::ldexp(static_cast<double>(t.raw[i]), -t.frac_bits);
          return out;
        } else {
          return t.dequantize();
        }
      },
      data);
}

const QTensor& QuantModel::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ContractError("missing tensor: " + name);
  return it->second;
}

namespace {

template <typename T>
const T& typed(const QuantModel& m, const std::string& name) {
  const auto* p = std::get_if<T>(&m.at(name).data);
  if (!p) throw ContractError("unexpected encoding for tensor: " + name);
  return *p;
}

}  // namespace

const quant::QMatrix& QuantModel::matrix(const std::string& name) const { return typed<quant::QMatrix>(*this, name); }
const quant::DpotVector& QuantModel::mix(const std::string& name) const { return typed<quant::DpotVector>(*this, name); }
const quant::U9Vector& QuantModel::u9(const std::string& name) const { return typed<quant::U9Vector>(*this, name); }

bool QuantModel::pow2_scales() const {
  for (const auto& [name, t] : tensors) {
    const bool ok = std::visit(
        [](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Fx16Tensor>) {
            return true;
          } else {
            return v.scale.is_pow2();
          }
        },
        t.data);
    if (!ok) return false;
  }
  return true;
}

void QuantModel::validate() const {
  for (const auto& spec : tensor_schema(dims)) {
    const auto& t = at(spec.name);
    if (t.shape != spec.shape || t.numel() != spec.numel()) throw ContractError("shape mismatch: " + spec.name);
    const bool ok = [&] {
      switch (spec.kind) {
        case TensorKind::kMatrix: return std::holds_alternative<quant::QMatrix>(t.data);
        case TensorKind::kMix: return std::holds_alternative<quant::DpotVector>(t.data);
        default: return std::holds_alternative<quant::U9Vector>(t.data);
      }
    }();
    if (!ok) throw ContractError("unexpected encoding for tensor: " + spec.name);
  }
}

QuantModel quantize_model(const FloatModel& m, const quant::DeltaPotConfig& cfg) {
  m.validate();
  cfg.validate();
  QuantModel q;
  q.dims = m.dims;
  q.dpot = cfg;
  for (const auto& spec : tensor_schema(m.dims)) {
    const auto& src = m.at(spec.name);
    QTensor t;
    t.shape = spec.shape;
    switch (spec.kind) {
      case TensorKind::kMatrix:
        t.data = quant::quantize_matrix(src.data, spec.shape[0], spec.shape[1], cfg, quant::GammaMode::kPow2);
        break;
      case TensorKind::kMix:
        t.data = quant::quantize_dpot_vector(src.data, cfg, quant::GammaMode::kPow2);
        break;
      case TensorKind::kAdditive:
      case TensorKind::kEmbedding:
        t.data = quant::quantize_uniform9(src.data, quant::ScaleMode::kPow2);
        break;
    }
    q.tensors.emplace(spec.name, std::move(t));
  }
  return q;
}

FloatModel dequantize_model(const QuantModel& m) {
  FloatModel f;
  f.dims = m.dims;
  for (const auto& [name, t] : m.tensors) f.tensors.emplace(name, FloatTensor{t.shape, t.dequantize()});
  return f;
}

}  // namespace hfrwkv::model

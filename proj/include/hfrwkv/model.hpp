#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hfrwkv/quant.hpp"

// Tensor schema of an RWKV-4 model plus its float and quantized containers.
//
// Names follow "emb.weight", "blocks.<i>.<part>" and "head.weight". Every
// time-mix vector has a stored complement "one_minus_<name>".

namespace hfrwkv::model {

struct Dims {
  uint32_t n_layers = 0;
  uint32_t hidden = 0;
  uint32_t ffn = 0;
  uint32_t vocab = 0;

  void validate() const;
  friend bool operator==(const Dims&, const Dims&) = default;
};

enum class TensorKind {
  kMatrix,     // Delta-PoT matrix
  kMix,        // Delta-PoT vector
  kAdditive,   // 9-bit uniform vector
  kEmbedding,  // 9-bit uniform matrix
};

enum class Encoding : uint8_t { kDpot = 0, kU9 = 1, kFx16 = 2 };

Encoding encoding_for(TensorKind kind);
std::string_view encoding_name(Encoding e);

struct TensorSpec {
  std::string name;
  TensorKind kind;
  std::vector<uint32_t> shape;

  size_t numel() const;
};

std::string block_name(size_t layer, std::string_view part);
/// Every tensor the engine needs, in canonical order.
std::vector<TensorSpec> tensor_schema(const Dims& dims);
/// Number of entries tensor_schema(dims) returns, without building it.
uint64_t schema_size(const Dims& dims);

struct FloatTensor {
  std::vector<uint32_t> shape;
  std::vector<double> data;
};

struct FloatModel {
  Dims dims;
  std::map<std::string, FloatTensor> tensors;

  const FloatTensor& at(const std::string& name) const;
  /// Throws ContractError on a missing tensor or a shape mismatch.
  void validate() const;
};

/// Raw 16-bit fixed-point tensor: value = raw * 2^-frac_bits.
struct Fx16Tensor {
  std::vector<int16_t> raw;
  int frac_bits = 8;

  friend bool operator==(const Fx16Tensor&, const Fx16Tensor&) = default;
};

struct QTensor {
  std::vector<uint32_t> shape;
  std::variant<quant::QMatrix, quant::DpotVector, quant::U9Vector, Fx16Tensor> data;

  Encoding encoding() const;
  size_t numel() const;
  std::vector<double> dequantize() const;
};

struct QuantModel {
  Dims dims;
  quant::DeltaPotConfig dpot;
  std::map<std::string, QTensor> tensors;

  const QTensor& at(const std::string& name) const;
  const quant::QMatrix& matrix(const std::string& name) const;
  const quant::DpotVector& mix(const std::string& name) const;
  const quant::U9Vector& u9(const std::string& name) const;
  /// True when every Delta-PoT gamma and 9-bit scale is a power of two.
  bool pow2_scales() const;
  void validate() const;
};

/// Matrices and mix vectors become Delta-PoT with power-of-two gamma; the
/// embedding and additive vectors become 9-bit codes with power-of-two steps.
QuantModel quantize_model(const FloatModel& m, const quant::DeltaPotConfig& cfg = {});
FloatModel dequantize_model(const QuantModel& m);

}  // namespace hfrwkv::model

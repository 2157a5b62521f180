#pragma once

#include <filesystem>
#include <stdexcept>

#include "hfrwkv/model.hpp"

// Float interchange directory: manifest.json plus one raw little-endian
// float32 file per tensor.
//
//   {"format": "hfrwkv-interchange", "version": 1, "n_layers": N,
//    "hidden_dim": D, "ffn_dim": F, "vocab_size": V,
//    "tensors": [{"name": ..., "shape": [...], "file": ...}, ...]}

namespace hfrwkv::interchange {

inline constexpr const char* kFormatName = "hfrwkv-interchange";
inline constexpr int kVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

class InterchangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads and schema-checks a model directory.
model::FloatModel read_model(const std::filesystem::path& dir);
/// Writes every tensor of m (values rounded to float32).
void write_model(const model::FloatModel& m, const std::filesystem::path& dir);

}  // namespace hfrwkv::interchange

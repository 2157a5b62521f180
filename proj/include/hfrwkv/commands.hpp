#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hfrwkv/model.hpp"

// Subcommand implementations behind the hfrwkv executable. Each returns the
// process exit code and writes JSON lines (or a table with pretty = true).

namespace hfrwkv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitViolation = 2;

struct QuantizeOptions {
  std::filesystem::path input;  // interchange directory
  std::filesystem::path out;    // .hfrw file
  std::vector<int> term_bits{3, 3, 2};
  bool compare = false;
  std::optional<std::string> scheme;  // restrict --compare to one scheme
  int bits = 9;
  bool pretty = false;
};

struct DequantizeOptions {
  std::filesystem::path model;
  std::filesystem::path out;  // interchange directory
};

struct InferOptions {
  std::filesystem::path model;
  std::vector<uint32_t> prompt{0};
  int tokens = 1;
  int lanes = 384;
  int tree_par = 512;
  int threads = 1;
  bool strict = false;
  bool pretty = false;
};

struct UnitsOptions {
  int div_bits = 12;
  bool pretty = false;
};

struct CyclesOptions {
  int64_t dim = 768;
  std::optional<int64_t> lanes;
  std::optional<int64_t> tree_par;
  bool pretty = false;
};

struct RandomModelOptions {
  model::Dims dims{2, 64, 256, 256};
  uint64_t seed = 1;
  std::filesystem::path out;  // interchange directory
};

int cmd_quantize(const QuantizeOptions& o, std::ostream& out, std::ostream& err);
int cmd_dequantize(const DequantizeOptions& o, std::ostream& out, std::ostream& err);
int cmd_infer(const InferOptions& o, std::ostream& out, std::ostream& err);
int cmd_units(const UnitsOptions& o, std::ostream& out, std::ostream& err);
int cmd_cycles(const CyclesOptions& o, std::ostream& out, std::ostream& err);
int cmd_codebook(const std::vector<int>& term_bits, std::ostream& out, std::ostream& err);
int cmd_validate(const std::filesystem::path& model, bool pretty, std::ostream& out, std::ostream& err);
int cmd_random_model(const RandomModelOptions& o, std::ostream& out, std::ostream& err);

/// "1,2,3" / "1 2 3", or @path to a file holding such a list.
std::vector<uint32_t> parse_prompt(const std::string& spec);
/// "3,3,2" -> {3, 3, 2}.
std::vector<int> parse_term_bits(const std::string& spec);

}  // namespace hfrwkv::cli

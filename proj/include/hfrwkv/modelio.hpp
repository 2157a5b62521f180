#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrwkv/model.hpp"

// .hfrw container. All integers little-endian.
//
// Header (fixed part, 28 bytes + n):
//   "HFRW" | version u16 | flags u16 | n_layers u32 | hidden u32 | ffn u32 |
//   vocab u32 | n u8 | k_0..k_{n-1} u8 | dir_offset u64 | dir_count u32
// Payloads follow the header; the directory follows the payloads. Record:
//   name_len u16 | name | encoding u8 | ndims u8 | dims u32[ndims] |
//   scale f64 | scale_exp i16 | is_pow2 u8 | offset u64 | bit_length u64
// Payload bits are written MSB-first into each byte and padded to a byte per
// tensor. Delta-PoT codes are sign first, then dq_0..dq_{n-1}, each field
// MSB-first. 9-bit and 16-bit codes are two's complement.

namespace hfrwkv::modelio {

inline constexpr char kMagic[4] = {'H', 'F', 'R', 'W'};
inline constexpr uint16_t kVersion = 1;
inline constexpr uint16_t kFlagPow2Scales = 1;

class ContainerError : public std::runtime_error {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kBadHeader,
    kTruncated,
    kCodeOutOfRange,
    kDanglingEntry,
    kOverlap,
    kShapeMismatch,
    kMissingTensor,
    kDuplicateTensor,
    kEmptyTensor,
  };

  ContainerError(Kind kind, const std::string& what);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* kind_name(ContainerError::Kind k);

struct DirectoryEntry {
  std::string name;
  model::Encoding encoding = model::Encoding::kDpot;
  std::vector<uint32_t> shape;
  double scale = 1.0;
  int16_t scale_exp = 0;
  bool is_pow2 = false;
  uint64_t offset = 0;
  uint64_t bit_length = 0;
};

struct Header {
  uint16_t version = kVersion;
  uint16_t flags = 0;
  model::Dims dims;
  quant::DeltaPotConfig dpot;
  uint64_t dir_offset = 0;
  uint32_t dir_count = 0;
};

/// Called with (offset, length) of every byte range the loader reads.
using ReadObserver = std::function<void(uint64_t, uint64_t)>;

/// Deterministic container bytes. Schema tensors come first in schema order,
/// then any extra tensors by name.
std::vector<uint8_t> pack_model(const model::QuantModel& m);
/// Parses and validates; throws ContainerError.
model::QuantModel load_model(std::span<const uint8_t> bytes, const ReadObserver& observer = {});

struct ContainerInfo {
  Header header;
  std::vector<DirectoryEntry> entries;
};

/// Header and directory only (payloads unchecked).
ContainerInfo read_directory(std::span<const uint8_t> bytes, const ReadObserver& observer = {});

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace hfrwkv::modelio

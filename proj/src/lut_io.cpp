#include <stdexcept>

#include "hfrwkv/units.hpp"

namespace hfrwkv::units {

namespace {
constexpr uint8_t kLutVersion = 1;
}

std::vector<uint8_t> dump_lut(LutKind kind, std::span<const uint16_t> entries) {
  if (entries.size() > 0xFFFF) throw ContractError("dump_lut: too many entries");
  std::vector<uint8_t> out{'H', 'L', 'U', 'T', static_cast<uint8_t>(kind), kLutVersion,
                           static_cast<uint8_t>(entries.size() & 0xFF), static_cast<uint8_t>(entries.size() >> 8)};
  out.reserve(8 + entries.size() * 2);
  for (uint16_t e : entries) {
    out.push_back(static_cast<uint8_t>(e & 0xFF));
    out.push_back(static_cast<uint8_t>(e >> 8));
  }
  return out;
}

LutImage load_lut(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8) throw std::runtime_error("LUT image truncated");
  if (bytes[0] != 'H' || bytes[1] != 'L' || bytes[2] != 'U' || bytes[3] != 'T') {
    throw std::runtime_error("LUT image has bad magic");
  }
  const uint8_t kind = bytes[4];
  if (kind < 1 || kind > 3) throw std::runtime_error("LUT image has unknown kind");
  if (bytes[5] != kLutVersion) throw std::runtime_error("LUT image has unsupported version");
  const size_t count = bytes[6] | (size_t{bytes[7]} << 8);
  if (bytes.size() != 8 + count * 2) throw std::runtime_error("LUT image size does not match entry count");
  LutImage img;
  img.kind = static_cast<LutKind>(kind);
  img.entries.resize(count);
  for (size_t i = 0; i < count; ++i) {
    img.entries[i] = static_cast<uint16_t>(bytes[8 + 2 * i] | (bytes[9 + 2 * i] << 8));
  }
  return img;
}

}  // namespace hfrwkv::units

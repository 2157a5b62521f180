#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hfrwkv {

/// Thrown when a caller breaks an operation's precondition (format or
/// dimension mismatch, invalid configuration).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Hardware-style status bits. Each flag latches on first occurrence and
/// stays set until clear() is called.
enum class Flag : uint32_t {
  kSaturated = 1u << 0,
  kDivByZero = 1u << 1,
  kExpOverflow = 1u << 2,
  kAccOverflow = 1u << 3,
};

class StatusFlags {
 public:
  void raise(Flag f) { bits_ |= static_cast<uint32_t>(f); }
  bool test(Flag f) const { return (bits_ & static_cast<uint32_t>(f)) != 0; }
  bool any() const { return bits_ != 0; }
  uint32_t bits() const { return bits_; }
  void clear() { bits_ = 0; }
  void merge(const StatusFlags& other) { bits_ |= other.bits_; }

  std::string describe() const;

 private:
  uint32_t bits_ = 0;
};

}  // namespace hfrwkv

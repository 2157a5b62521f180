#pragma once

#include <cstdint>

#include "hfrwkv/model.hpp"

namespace hfrwkv::model {

/// Seeded RWKV-4-shaped float model: normalized embedding rows, near-identity
/// LayerNorm parameters, mixes in (0, 1), log-spaced positive decays and
/// fan-in scaled matrices. Identical seeds give identical models.
FloatModel random_model(const Dims& dims, uint64_t seed);

}  // namespace hfrwkv::model

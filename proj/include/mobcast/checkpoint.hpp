#pragma once

#include "mobcast/param_store.hpp"
#include "mobcast/types.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mobcast {

// FNV-1a 64-bit over a canonical string; stable across platforms.
std::uint64_t fnv1a64(const std::string& s);
std::string fnv1a64_hex(const std::string& s);

struct CheckpointHeader {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::int64_t epoch = 0;
    std::int64_t adam_t = 0;
};

// Self-describing binary container: a JSON header followed by named
// (rows, cols, little-endian float64) records. Parameter values plus Adam
// moment buffers round-trip bit-exactly; extra records carry things like
// normalization statistics.
struct Checkpoint {
    CheckpointHeader header;
    std::vector<std::pair<std::string, Matrix>> records;

    const Matrix* find(const std::string& name) const;
    const Matrix& require(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamStore& store,
                     const std::vector<std::pair<std::string, Matrix>>& extras = {});

Checkpoint load_checkpoint(const std::string& path);

// Copies parameter values and Adam moments from a checkpoint back into a
// store built with the same architecture. Throws on missing names or shape
// mismatches.
void restore_params(const Checkpoint& ckpt, ParamStore& store);

}  // namespace mobcast

#pragma once

// Bit-exact binary checkpoint format:
//   magic "PEMB" | version u32 LE | config hash 8 bytes LE | tensor count u32 LE
//   per tensor: name length u16 LE | UTF-8 name | rank u8 | dims u32 LE each |
//               f32 LE values, row-major
// Writes are atomic (temp file + rename). Loads validate magic, version and
// config hash, and refuse dimension mismatches by name.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pembed/errors.hpp"
#include "pembed/tensor.hpp"

namespace pembed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t config_hash = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // save order preserved

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// expected_hash 0 skips the hash check (used by inspect).
Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_hash);

}  // namespace pembed

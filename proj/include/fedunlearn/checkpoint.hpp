#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "fedunlearn/types.hpp"

namespace fedunlearn {

/// On-disk model snapshot.
///
/// Layout, all integers and floats little-endian:
///   8 bytes  magic "FEDCKPT1"
///   u64      round index (history position)
///   u64      d
///   d x f64  parameter values
///   u64      config hash
struct Checkpoint {
  std::uint64_t round_index = 0;
  std::uint64_t config_hash = 0;
  ModelParams values;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace fedunlearn

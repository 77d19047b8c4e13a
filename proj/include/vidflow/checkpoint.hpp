#pragma once

#include <filesystem>

#include "vidflow/config.hpp"
#include "vidflow/io.hpp"
#include "vidflow/trainer.hpp"

namespace vidflow {

/// "FCKP" | version u32 | config text (u32 length + UTF-8) | u32 parameter count |
/// records | u32 optimizer record count | records named adam.m/<p>, adam.v/<p> |
/// step u64. A record is: u32 name length, name, u32 rank, u32 extents[rank],
/// f32 LE values. All integers are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const TrainState& state);

/// Throws FileError: bad_magic, bad_version, bad_header (config text),
/// truncated (naming the record), shape_mismatch (tensors vs. embedded config).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vidflow

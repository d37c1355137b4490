// SPDX-License-Identifier: Apache-2.0
//
// Single-file binary checkpoints. Layout (little-endian), see docs/checkpoint.md:
//
//   char[8]  "DPRCNETC"
//   u32      format version (1)
//   u32      config byte length, then the canonical model config text
//   u64      tensor count, then per tensor:
//              u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[]
//   i64      epoch
//   f64      best validation score

#pragma once

#include <cstdint>
#include <filesystem>

#include "dprcnet/separator.hpp"

namespace dprc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::int64_t epoch = 0;
    double best_score = 0.0;
};

struct Checkpoint {
    DPRCNetModel model;
    CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const DPRCNetModel& model, const CheckpointMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dprc

// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration. Lines starting with '#' are
// comments; list values are comma separated. Unknown keys are rejected.
//
//   model.L model.stride model.N model.B model.I model.H model.D model.blocks
//   model.hidden model.S model.layerscale_init model.droppath_max
//   train.epochs train.lr0 train.batch_size train.patience train.seed
//   train.clip_norm train.utterance_seconds
//   data.sample_rate data.duration_s
//
// model.stride defaults to L/2 and model.H to I/2 when not given.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dprcnet/separator.hpp"
#include "dprcnet/training.hpp"

namespace dprc {

struct DataConfig {
    int sample_rate = 8000;
    double duration_s = 1.0;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

RunConfig parse_run_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical text for the model.* keys (round-trips through parse_run_config).
std::string model_config_to_text(const ModelConfig& cfg);
std::string run_config_to_text(const RunConfig& cfg);

// FNV-1a over the canonical model text.
std::uint64_t config_hash(const ModelConfig& cfg);

}  // namespace dprc

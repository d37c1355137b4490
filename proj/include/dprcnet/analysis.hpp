// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter and MAC counts for a ModelConfig, and manifest-level
// separation scoring.
//
// MAC convention: one multiply-add per weight use. Biases, activations,
// norms, mask products and overlap-adds are not counted.

#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dprcnet/data.hpp"
#include "dprcnet/separator.hpp"

namespace dprc {

struct ComplexityItem {
    std::string module;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

struct ComplexityReport {
    std::vector<ComplexityItem> breakdown;
    std::uint64_t total_params = 0;
    std::uint64_t total_macs = 0;
    double duration_s = 0.0;
    int sample_rate = 0;
    std::size_t frames = 0;  // K
    std::size_t chunks = 0;  // J
    std::string assumptions;
};

// Parameters only; MAC fields stay zero.
ComplexityReport count_params(const ModelConfig& cfg);
// Parameters and MACs of one forward pass over duration_s seconds. Throws
// InputError when the input is shorter than one encoder frame.
ComplexityReport estimate_macs(const ModelConfig& cfg, double duration_s, int sample_rate = 8000);

// Column-aligned table.
void print_report(std::ostream& os, const ComplexityReport& r);
// key=value, one per line.
void print_report_kv(std::ostream& os, const ComplexityReport& r);

struct EntryScore {
    std::size_t index = 0;
    std::string id;  // mixture path as listed in the manifest
    double si_sdri = 0.0;
    double sdri = 0.0;
};

struct EvaluationReport {
    std::uint64_t config_hash = 0;
    std::vector<EntryScore> entries;
    double mean_si_sdri = 0.0;
    double mean_sdri = 0.0;
};

// Maps a mixture to S estimates of the same length.
using SeparatorFn = std::function<std::vector<std::vector<double>>(const Waveform&)>;

EvaluationReport evaluate_manifest(const SeparatorFn& separator, const Manifest& manifest, std::size_t speakers,
                                   std::uint64_t config_hash = 0);
// Throws ConfigError when the model's speaker count differs from the manifest's.
EvaluationReport evaluate_manifest(const DPRCNetModel& model, const Manifest& manifest);

void print_evaluation(std::ostream& os, const EvaluationReport& r);

}  // namespace dprc

// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-source corpora: seeded source synthesis, SNR-controlled
// mixing, 16-bit PCM WAV I/O and tab-separated manifests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dprcnet/frontend.hpp"

namespace dprc {

struct BandNoise {
    double lo_hz = 300.0;
    double hi_hz = 1200.0;
};

struct Harmonic {
    double f0_hz = 220.0;
    std::size_t partials = 8;
};

using SourceKind = std::variant<BandNoise, Harmonic>;

// Unit-RMS source, deterministic in (kind, duration, rate, seed).
// Band noise is white Gaussian noise through a Blackman-windowed sinc
// band-pass (stop band below -70 dB).
Waveform synth_source(const SourceKind& kind, double duration_s, int sample_rate, std::uint64_t seed);

struct MixtureSample {
    Waveform mixture;
    std::vector<Waveform> sources;  // rescaled references, sum to mixture (+ noise)
    std::optional<Waveform> noise;
    double snr_db = 0.0;
    double gain = 1.0;  // factor applied to the second source
    std::uint64_t seed = 0;
};

// Uniform draw on [lo, hi] dB from a seed.
double draw_snr_db(std::uint64_t seed, double lo = -5.0, double hi = 5.0);

// Rescales s2 by g so 10 log10(P(s1) / P(g s2)) = snr_db; mixture = s1 + g s2.
MixtureSample mix_at_snr(const Waveform& s1, const Waveform& s2, double snr_db, std::uint64_t seed);
// Same with snr_db = draw_snr_db(seed).
MixtureSample mix_at_snr(const Waveform& s1, const Waveform& s2, std::uint64_t seed);

// Mono 16-bit PCM RIFF/WAVE. Samples outside [-1, 1] are clipped; the number
// of clipped samples is returned. The file is written to a temporary name and
// renamed into place.
std::size_t wav_write(const Waveform& w, const std::filesystem::path& path);
Waveform wav_read(const std::filesystem::path& path);

struct ManifestEntry {
    std::string mixture;
    std::string source1;
    std::string source2;
    double duration_s = 0.0;
    std::uint64_t seed = 0;
};

// Paths in entries are relative to base_dir (the manifest's directory).
struct Manifest {
    std::vector<ManifestEntry> entries;
    int sample_rate = 8000;
    std::filesystem::path base_dir;
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

// Reads every entry's WAVs back into memory.
std::vector<MixtureSample> load_samples(const Manifest& m);

struct DatasetOptions {
    BandNoise first{300.0, 1200.0};
    BandNoise second{1800.0, 3400.0};
    int sample_rate = 8000;
    double peak = 0.9;  // mixtures and sources are jointly scaled to this peak when louder
};

// Writes mix/, s1/, s2/ WAVs and manifest.tsv under out_dir.
Manifest build_dataset(std::size_t count, double duration_s, const std::filesystem::path& out_dir,
                       std::uint64_t seed, const DatasetOptions& options = {});

// In-memory counterpart of build_dataset (same samples, no quantization).
std::vector<MixtureSample> synth_dataset(std::size_t count, double duration_s, std::uint64_t seed,
                                         const DatasetOptions& options = {});

}  // namespace dprc

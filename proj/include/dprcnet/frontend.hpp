// SPDX-License-Identifier: Apache-2.0
//
// Learned analysis/synthesis boundary between waveforms and latent frames.

#pragma once

#include <cstddef>
#include <vector>

#include "dprcnet/tensor.hpp"

namespace dprc {

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 8000;

    std::size_t size() const { return samples.size(); }
};

struct FeatureSequence {
    Tensor values;  // N x K
    std::size_t frame_length = 0;
    std::size_t stride = 0;
    std::size_t original_length = 0;  // T before padding; 0 means unknown

    std::size_t frames() const { return values.dim(1); }
};

// Smallest padded length >= T (and >= L) with (T_padded - L) divisible by stride.
std::size_t padded_length(std::size_t samples, std::size_t frame_length, std::size_t stride);
std::size_t frame_count(std::size_t samples, std::size_t frame_length, std::size_t stride);

// y: [T] waveform tensor. kernel: N x 1 x L, no bias, no activation.
FeatureSequence encode(const Tensor& y, const Tensor& kernel, std::size_t stride);
FeatureSequence encode(const Waveform& y, const Tensor& kernel, std::size_t stride);

// Overlap-add synthesis with an N x 1 x L kernel, trimmed to original_length.
// Returns a [T] tensor.
Tensor decode(const FeatureSequence& f, const Tensor& kernel);

Tensor to_tensor(const Waveform& w);
Waveform to_waveform(const Tensor& t, int sample_rate = 8000);

}  // namespace dprc

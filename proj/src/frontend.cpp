// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/frontend.hpp"

#include <cmath>

#include "dprcnet/errors.hpp"
#include "dprcnet/nn.hpp"
#include "dprcnet/ops.hpp"

namespace dprc {

std::size_t padded_length(std::size_t samples, std::size_t frame_length, std::size_t stride) {
    if (stride == 0 || frame_length == 0) throw ConfigError("frontend: frame length and stride must be >= 1");
    if (samples <= frame_length) return frame_length;
    const std::size_t over = (samples - frame_length) % stride;
    return over == 0 ? samples : samples + (stride - over);
}

std::size_t frame_count(std::size_t samples, std::size_t frame_length, std::size_t stride) {
    return (padded_length(samples, frame_length, stride) - frame_length) / stride + 1;
}

Tensor to_tensor(const Waveform& w) {
    if (w.samples.empty()) throw InputError("frontend: empty waveform");
    return Tensor::from({w.samples.size()}, w.samples);
}

Waveform to_waveform(const Tensor& t, int sample_rate) {
    Waveform w;
    w.samples.assign(t.data().begin(), t.data().end());
    w.sample_rate = sample_rate;
    return w;
}

FeatureSequence encode(const Tensor& y, const Tensor& kernel, std::size_t stride) {
    if (y.rank() != 1) throw ShapeError("encode: waveform tensor must be rank 1");
    if (kernel.rank() != 3 || kernel.dim(1) != 1) throw ShapeError("encode: kernel must be N x 1 x L");
    const std::size_t T = y.dim(0), L = kernel.dim(2);
    const std::size_t Tp = padded_length(T, L, stride);
    Tensor x = y;
    if (Tp != T) x = concat({y, Tensor::zeros({Tp - T})}, 0);
    FeatureSequence f;
    f.values = conv1d(reshape(x, {1, Tp}), kernel, stride);
    f.frame_length = L;
    f.stride = stride;
    f.original_length = T;
    return f;
}

FeatureSequence encode(const Waveform& y, const Tensor& kernel, std::size_t stride) {
    return encode(to_tensor(y), kernel, stride);
}

Tensor decode(const FeatureSequence& f, const Tensor& kernel) {
    if (f.original_length == 0 || f.stride == 0) throw ContractError("decode: feature sequence lacks length metadata");
    if (kernel.rank() != 3 || kernel.dim(1) != 1) throw ShapeError("decode: kernel must be N x 1 x L");
    if (kernel.dim(2) != f.frame_length) throw ContractError("decode: kernel length differs from the encoder frame length");
    Tensor wave = conv_transpose1d(f.values, kernel, f.stride);
    const std::size_t T = wave.dim(1);
    if (f.original_length > T) throw ContractError("decode: recorded length exceeds synthesized length");
    return reshape(slice(wave, 1, 0, f.original_length), {f.original_length});
}

}  // namespace dprc

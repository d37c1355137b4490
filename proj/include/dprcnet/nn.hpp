// SPDX-License-Identifier: Apache-2.0
//
// Differentiable layers: 1-D convolution and its transpose, pointwise
// (1x1) convolution over the leading feature axis, linear maps, layer
// normalization, GELU, sigmoid, bidirectional LSTM, LayerScale and
// stochastic-depth drop-path.
//
// Feature-major layout throughout: a D x I x J tensor stores feature d,
// intra-chunk index i, inter-chunk index j at (d * I + i) * J + j.

#pragma once

#include <cstddef>
#include <optional>

#include "dprcnet/tensor.hpp"

namespace dprc {

enum class Mode { train, eval };

// Seeded uniform(-k, k) with k = 1 / sqrt(fan_in).
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// x: C_in x T, kernel: C_out x C_in x L -> C_out x K, K = (T - L) / stride + 1.
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              const std::optional<Tensor>& bias = std::nullopt);

// f: C_in x K, kernel: C_in x C_out x L -> C_out x ((K - 1) * stride + L).
// Frames are synthesized and overlap-added at offsets k * stride.
Tensor conv_transpose1d(const Tensor& f, const Tensor& kernel, std::size_t stride);

// u: D_in x ... (any trailing extents), kernel: D_out x D_in -> D_out x ...
Tensor pointwise_conv2d(const Tensor& u, const Tensor& kernel,
                        const std::optional<Tensor>& bias = std::nullopt);

// Affine map on the trailing axis: x ... x D_in, weight D_out x D_in, bias D_out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalizes over `axis` with the biased variance estimator. scale/shift have
// one entry per element of that axis. Default axis is the trailing one.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-5,
                  std::optional<std::size_t> axis = std::nullopt);

// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

struct LstmDirection {
    Tensor w_ih;  // 4H x D, gate rows ordered i, f, g, o
    Tensor w_hh;  // 4H x H
    Tensor bias;  // 4H
};

struct BiLstmParams {
    LstmDirection fwd;
    LstmDirection bwd;

    std::size_t hidden() const { return fwd.w_hh.dim(1); }
    std::size_t input() const { return fwd.w_ih.dim(1); }

    // Weights uniform(-1/sqrt(H), 1/sqrt(H)); forget-gate bias 1, other biases 0.
    static BiLstmParams init(std::size_t input, std::size_t hidden, Rng& rng);
};

// x: D x T -> 2H x T, forward-direction states in rows [0, H).
Tensor bilstm(const Tensor& x, const BiLstmParams& p);

// x: D x T x N, N independent sequences of length T -> 2H x T x N.
Tensor bilstm_batched(const Tensor& x, const BiLstmParams& p);

enum class ChunkAxis { intra, inter };

// x: D x I x J. intra runs J sequences of length I; inter runs I sequences of
// length J. Output 2H x I x J.
Tensor bilstm_chunks(const Tensor& x, const BiLstmParams& p, ChunkAxis axis);

// out[d, ...] = gamma[d] * h[d, ...]
Tensor layer_scale(const Tensor& h, const Tensor& gamma);

// Stochastic depth on one sample: eval is the identity; train zeroes h with
// probability p and otherwise rescales by 1 / (1 - p).
Tensor drop_path(const Tensor& h, double p, Mode mode, Rng& rng);
// Same with an externally fixed keep/drop decision (train semantics).
Tensor drop_path_fixed(const Tensor& h, double p, bool keep);
// Leading axis indexes samples; one independent decision per sample.
Tensor drop_path_batched(const Tensor& h, double p, Mode mode, Rng& rng);

}  // namespace dprc

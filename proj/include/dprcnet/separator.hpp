// SPDX-License-Identifier: Apache-2.0
//
// Dual-path recurrent-convolutional mask estimator and the full
// encoder -> separator -> decoder pipeline.
//
//   mixture -> encoder (N x K) -> layer norm -> bottleneck (B x K)
//           -> segment (B x I x J) -> 4 stages of DP-RCNet blocks (D4 x I x J)
//           -> GELU -> 1x1 conv to S*N -> merge (S*N x K) -> sigmoid
//           -> masks * encoder features -> decoder -> S waveforms
//
// Each block is two residual sub-blocks (intra-chunk, then inter-chunk):
//   x + drop_path(gamma * contract(gelu(expand(norm(fc(bilstm(x)))))))

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dprcnet/frontend.hpp"
#include "dprcnet/nn.hpp"
#include "dprcnet/tensor.hpp"

namespace dprc {

struct ModelConfig {
    std::size_t frame_length = 16;  // L
    std::size_t stride = 8;         // encoder hop, L / 2
    std::size_t features = 256;     // N
    std::size_t bottleneck = 64;    // B
    std::size_t chunk = 96;         // I
    std::size_t hop = 48;           // chunk hop, I / 2
    std::vector<std::size_t> stage_dims{16, 32, 64, 128};
    std::vector<std::size_t> stage_blocks{3, 3, 9, 3};
    std::size_t hidden = 128;  // Bi-LSTM units per direction
    std::size_t speakers = 2;  // S
    double layerscale_init = 1e-6;
    double droppath_max = 0.1;

    // Throws ConfigError naming the offending field.
    void validate() const;
    std::size_t output_dim() const { return stage_dims.back(); }
    std::size_t subblock_count() const;
    // Drop probability of the k-th sub-block in network order (linear ramp).
    double drop_prob(std::size_t subblock_index) const;

    static ModelConfig paper() { return {}; }
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

struct ChunkTensor {
    Tensor values;  // D x I x J
    std::size_t chunk = 0;
    std::size_t hop = 0;
    std::size_t frames = 0;  // K before padding
    std::size_t pad_front = 0;
    std::size_t pad_back = 0;

    std::size_t chunks() const { return values.dim(2); }
    std::size_t padded_frames() const { return frames + pad_front + pad_back; }
};

// Zero-pads the frame axis of x (D x K) by `pad` frames on each side (hop by
// default), extends the back so chunks of `chunk` frames at `hop` tile it
// exactly, and stacks the chunks into D x I x J.
ChunkTensor segment(const Tensor& x, std::size_t chunk, std::size_t hop,
                    std::optional<std::size_t> pad = std::nullopt);

// Overlap-adds chunks back onto the frame axis, divides by per-frame
// coverage and strips the padding. Left inverse of segment().
Tensor merge(const ChunkTensor& u);

struct SubBlockParams {
    BiLstmParams rnn;
    Tensor fc_weight, fc_bias;          // D x 2H, D
    Tensor norm_scale, norm_shift;      // D
    Tensor expand_weight, expand_bias;  // 4D x D, 4D
    Tensor contract_weight, contract_bias;  // D x 4D, D
    Tensor gamma;                       // D, LayerScale
    double drop_prob = 0.0;

    static SubBlockParams init(std::size_t dim, std::size_t hidden, double layerscale, double drop_prob, Rng& rng);
    std::size_t dim() const { return gamma.dim(0); }
};

struct BlockParams {
    SubBlockParams intra;
    SubBlockParams inter;
};

struct StageParams {
    Tensor norm_scale, norm_shift;  // D_in
    Tensor proj_weight, proj_bias;  // D x D_in, D
    std::vector<BlockParams> blocks;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct DPRCNetModel {
    ModelConfig config;
    Tensor encoder;                          // N x 1 x L
    Tensor input_norm_scale, input_norm_shift;  // N
    Tensor bottleneck_weight, bottleneck_bias;  // B x N, B
    std::vector<StageParams> stages;
    Tensor head_weight, head_bias;  // S*N x D4, S*N
    Tensor decoder;                 // N x 1 x L

    static DPRCNetModel init(const ModelConfig& config, std::uint64_t seed);

    // Stable network order; names are unique and used by checkpoints.
    std::vector<NamedTensor> parameters() const;
    std::size_t parameter_count() const;
    void set_requires_grad(bool on);
    void zero_grad();
};

struct ForwardContext {
    Mode mode = Mode::eval;
    Rng* rng = nullptr;  // required in train mode when any drop_prob > 0
    // Overrides every stochastic-depth draw when set.
    std::optional<bool> forced_keep;
};

Tensor subblock_forward(const Tensor& x, const SubBlockParams& p, ChunkAxis axis, const ForwardContext& ctx);
Tensor block_forward(const Tensor& x, const BlockParams& p, const ForwardContext& ctx);
Tensor backbone_forward(const Tensor& u, const std::vector<StageParams>& stages, const ForwardContext& ctx);

// gelu -> 1x1 conv (D4 -> S*N) -> merge -> sigmoid -> S masks of N x K.
std::vector<Tensor> mask_head(const Tensor& u_tilde, const Tensor& head_weight, const Tensor& head_bias,
                              const ChunkTensor& layout, std::size_t speakers, std::size_t features);

// Everything up to the masks, exposed for tests and analysis.
struct SeparationTrace {
    FeatureSequence mixture_features;
    ChunkTensor chunks;
    std::vector<Tensor> masks;
};

// y: [T] mixture. Returns S tensors of shape [T].
std::vector<Tensor> separate(const Tensor& y, const DPRCNetModel& model, const ForwardContext& ctx = {},
                             SeparationTrace* trace = nullptr);
std::vector<Waveform> separate(const Waveform& y, const DPRCNetModel& model);

}  // namespace dprc

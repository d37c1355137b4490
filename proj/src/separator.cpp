// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/separator.hpp"

#include <algorithm>
#include <memory>

#include "dprcnet/errors.hpp"
#include "dprcnet/ops.hpp"

namespace dprc {

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("ModelConfig: ") + name + " must be >= 1");
    };
    positive(frame_length, "L");
    positive(stride, "stride");
    positive(features, "N");
    positive(bottleneck, "B");
    positive(chunk, "I");
    positive(hop, "H");
    positive(hidden, "hidden");
    positive(speakers, "S");
    if (hop > chunk) throw ConfigError("ModelConfig: H must not exceed I");
    if (stage_dims.empty()) throw ConfigError("ModelConfig: D must list at least one stage");
    if (stage_dims.size() != stage_blocks.size())
        throw ConfigError("ModelConfig: D and blocks must have the same number of stages");
    for (auto d : stage_dims) positive(d, "D entry");
    if (droppath_max < 0 || droppath_max >= 1) throw ConfigError("ModelConfig: droppath_max must lie in [0, 1)");
}

std::size_t ModelConfig::subblock_count() const {
    std::size_t n = 0;
    for (auto b : stage_blocks) n += 2 * b;
    return n;
}

double ModelConfig::drop_prob(std::size_t index) const {
    const std::size_t n = subblock_count();
    if (n <= 1) return 0.0;
    return droppath_max * static_cast<double>(index) / static_cast<double>(n - 1);
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.frame_length == b.frame_length && a.stride == b.stride && a.features == b.features &&
           a.bottleneck == b.bottleneck && a.chunk == b.chunk && a.hop == b.hop && a.stage_dims == b.stage_dims &&
           a.stage_blocks == b.stage_blocks && a.hidden == b.hidden && a.speakers == b.speakers &&
           a.layerscale_init == b.layerscale_init && a.droppath_max == b.droppath_max;
}

// ---------------------------------------------------------------------------
// Segmentation

ChunkTensor segment(const Tensor& x, std::size_t chunk, std::size_t hop, std::optional<std::size_t> pad) {
    if (chunk == 0) throw ConfigError("segment: chunk size must be >= 1");
    if (hop == 0 || hop > chunk) throw ConfigError("segment: hop must satisfy 1 <= H <= I");
    if (x.rank() != 2) throw ShapeError("segment: input must be D x K");
    const std::size_t D = x.dim(0), K = x.dim(1);
    const std::size_t front = pad.value_or(hop);
    std::size_t Kp = std::max(chunk, K + 2 * front);
    if ((Kp - chunk) % hop) Kp += hop - (Kp - chunk) % hop;
    const std::size_t J = (Kp - chunk) / hop + 1;

    ChunkTensor out;
    out.chunk = chunk;
    out.hop = hop;
    out.frames = K;
    out.pad_front = front;
    out.pad_back = Kp - K - front;

    auto xd = x.data();
    std::vector<double> v(D * chunk * J, 0.0);
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t i = 0; i < chunk; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                const std::size_t pos = j * hop + i;
                if (pos >= front && pos < front + K) v[(d * chunk + i) * J + j] = xd[d * K + pos - front];
            }
    out.values = Tensor::make_result({D, chunk, J}, std::move(v), "segment", {x},
                                     [x, D, K, chunk, hop, J, front](std::span<const double> g) {
                                         auto gx = x.impl()->grad_buffer();
                                         for (std::size_t d = 0; d < D; ++d)
                                             for (std::size_t i = 0; i < chunk; ++i)
                                                 for (std::size_t j = 0; j < J; ++j) {
                                                     const std::size_t pos = j * hop + i;
                                                     if (pos >= front && pos < front + K)
                                                         gx[d * K + pos - front] += g[(d * chunk + i) * J + j];
                                                 }
                                     });
    return out;
}

Tensor merge(const ChunkTensor& u) {
    if (!u.values.defined() || u.values.rank() != 3) throw ContractError("merge: chunk values must be D x I x J");
    const std::size_t D = u.values.dim(0), I = u.values.dim(1), J = u.values.dim(2);
    const std::size_t K = u.frames, front = u.pad_front, H = u.hop;
    if (I != u.chunk || H == 0 || K == 0 || (J - 1) * H + I != u.padded_frames())
        throw ContractError("merge: segmentation metadata does not match values of shape " +
                            shape_str(u.values.shape()));
    auto coverage = std::make_shared<std::vector<double>>(K, 0.0);
    for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < J; ++j) {
            const std::size_t pos = j * H + i;
            if (pos >= front && pos < front + K) (*coverage)[pos - front] += 1.0;
        }
    auto ud = u.values.data();
    std::vector<double> out(D * K, 0.0);
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t i = 0; i < I; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                const std::size_t pos = j * H + i;
                if (pos >= front && pos < front + K) out[d * K + pos - front] += ud[(d * I + i) * J + j];
            }
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < K; ++k) out[d * K + k] /= (*coverage)[k];
    Tensor values = u.values;
    return Tensor::make_result({D, K}, std::move(out), "merge", {values},
                               [values, coverage, D, I, J, K, H, front](std::span<const double> g) {
                                   auto gu = values.impl()->grad_buffer();
                                   for (std::size_t d = 0; d < D; ++d)
                                       for (std::size_t i = 0; i < I; ++i)
                                           for (std::size_t j = 0; j < J; ++j) {
                                               const std::size_t pos = j * H + i;
                                               if (pos >= front && pos < front + K)
                                                   gu[(d * I + i) * J + j] +=
                                                       g[d * K + pos - front] / (*coverage)[pos - front];
                                           }
                               });
}

// ---------------------------------------------------------------------------
// Parameters

SubBlockParams SubBlockParams::init(std::size_t dim, std::size_t hidden, double layerscale, double drop_prob,
                                    Rng& rng) {
    SubBlockParams p;
    p.rnn = BiLstmParams::init(dim, hidden, rng);
    p.fc_weight = init_uniform({dim, 2 * hidden}, 2 * hidden, rng);
    p.fc_bias = init_uniform({dim}, 2 * hidden, rng);
    p.norm_scale = Tensor::constant({dim}, 1.0);
    p.norm_shift = Tensor::zeros({dim});
    p.expand_weight = init_uniform({4 * dim, dim}, dim, rng);
    p.expand_bias = init_uniform({4 * dim}, dim, rng);
    p.contract_weight = init_uniform({dim, 4 * dim}, 4 * dim, rng);
    p.contract_bias = init_uniform({dim}, 4 * dim, rng);
    p.gamma = Tensor::constant({dim}, layerscale);
    p.drop_prob = drop_prob;
    return p;
}

DPRCNetModel DPRCNetModel::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    DPRCNetModel m;
    m.config = config;
    const std::size_t N = config.features, L = config.frame_length, B = config.bottleneck;
    m.encoder = init_uniform({N, 1, L}, L, rng);
    m.input_norm_scale = Tensor::constant({N}, 1.0);
    m.input_norm_shift = Tensor::zeros({N});
    m.bottleneck_weight = init_uniform({B, N}, N, rng);
    m.bottleneck_bias = init_uniform({B}, N, rng);
    std::size_t din = B, sub = 0;
    for (std::size_t r = 0; r < config.stage_dims.size(); ++r) {
        const std::size_t D = config.stage_dims[r];
        StageParams s;
        s.norm_scale = Tensor::constant({din}, 1.0);
        s.norm_shift = Tensor::zeros({din});
        s.proj_weight = init_uniform({D, din}, din, rng);
        s.proj_bias = init_uniform({D}, din, rng);
        for (std::size_t b = 0; b < config.stage_blocks[r]; ++b) {
            BlockParams bp;
            bp.intra = SubBlockParams::init(D, config.hidden, config.layerscale_init, config.drop_prob(sub++), rng);
            bp.inter = SubBlockParams::init(D, config.hidden, config.layerscale_init, config.drop_prob(sub++), rng);
            s.blocks.push_back(std::move(bp));
        }
        m.stages.push_back(std::move(s));
        din = D;
    }
    const std::size_t SN = config.speakers * N;
    m.head_weight = init_uniform({SN, din}, din, rng);
    m.head_bias = init_uniform({SN}, din, rng);
    // Decoder kernel is N x 1 x L; each synthesized frame sums N contributions.
    m.decoder = init_uniform({N, 1, L}, N, rng);
    return m;
}

namespace {

void append_subblock(std::vector<NamedTensor>& out, const std::string& prefix, const SubBlockParams& p) {
    out.push_back({prefix + ".rnn.fwd.w_ih", p.rnn.fwd.w_ih});
    out.push_back({prefix + ".rnn.fwd.w_hh", p.rnn.fwd.w_hh});
    out.push_back({prefix + ".rnn.fwd.bias", p.rnn.fwd.bias});
    out.push_back({prefix + ".rnn.bwd.w_ih", p.rnn.bwd.w_ih});
    out.push_back({prefix + ".rnn.bwd.w_hh", p.rnn.bwd.w_hh});
    out.push_back({prefix + ".rnn.bwd.bias", p.rnn.bwd.bias});
    out.push_back({prefix + ".fc.weight", p.fc_weight});
    out.push_back({prefix + ".fc.bias", p.fc_bias});
    out.push_back({prefix + ".norm.scale", p.norm_scale});
    out.push_back({prefix + ".norm.shift", p.norm_shift});
    out.push_back({prefix + ".expand.weight", p.expand_weight});
    out.push_back({prefix + ".expand.bias", p.expand_bias});
    out.push_back({prefix + ".contract.weight", p.contract_weight});
    out.push_back({prefix + ".contract.bias", p.contract_bias});
    out.push_back({prefix + ".gamma", p.gamma});
}

}  // namespace

std::vector<NamedTensor> DPRCNetModel::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"encoder.weight", encoder});
    out.push_back({"input_norm.scale", input_norm_scale});
    out.push_back({"input_norm.shift", input_norm_shift});
    out.push_back({"bottleneck.weight", bottleneck_weight});
    out.push_back({"bottleneck.bias", bottleneck_bias});
    for (std::size_t r = 0; r < stages.size(); ++r) {
        const auto& s = stages[r];
        const std::string sp = "stages." + std::to_string(r);
        out.push_back({sp + ".norm.scale", s.norm_scale});
        out.push_back({sp + ".norm.shift", s.norm_shift});
        out.push_back({sp + ".proj.weight", s.proj_weight});
        out.push_back({sp + ".proj.bias", s.proj_bias});
        for (std::size_t b = 0; b < s.blocks.size(); ++b) {
            const std::string bp = sp + ".blocks." + std::to_string(b);
            append_subblock(out, bp + ".intra", s.blocks[b].intra);
            append_subblock(out, bp + ".inter", s.blocks[b].inter);
        }
    }
    out.push_back({"head.weight", head_weight});
    out.push_back({"head.bias", head_bias});
    out.push_back({"decoder.weight", decoder});
    return out;
}

std::size_t DPRCNetModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

void DPRCNetModel::set_requires_grad(bool on) {
    for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

void DPRCNetModel::zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

// ---------------------------------------------------------------------------
// Forward

Tensor subblock_forward(const Tensor& x, const SubBlockParams& p, ChunkAxis axis, const ForwardContext& ctx) {
    if (x.rank() != 3 || x.dim(0) != p.dim())
        throw ShapeError("subblock_forward: expected " + std::to_string(p.dim()) + " x I x J input, got " +
                         shape_str(x.shape()));
    Tensor h = bilstm_chunks(x, p.rnn, axis);
    h = pointwise_conv2d(h, p.fc_weight, p.fc_bias);
    h = layer_norm(h, p.norm_scale, p.norm_shift, 1e-5, 0);
    h = pointwise_conv2d(h, p.expand_weight, p.expand_bias);
    h = gelu(h);
    h = pointwise_conv2d(h, p.contract_weight, p.contract_bias);
    h = layer_scale(h, p.gamma);
    if (ctx.mode == Mode::train && p.drop_prob > 0) {
        if (ctx.forced_keep) {
            h = drop_path_fixed(h, p.drop_prob, *ctx.forced_keep);
        } else {
            if (!ctx.rng) throw ContractError("subblock_forward: train mode with drop-path needs an rng");
            h = drop_path(h, p.drop_prob, Mode::train, *ctx.rng);
        }
    }
    return add(x, h);
}

Tensor block_forward(const Tensor& x, const BlockParams& p, const ForwardContext& ctx) {
    if (p.intra.dim() != p.inter.dim()) throw ConfigError("block_forward: sub-blocks disagree on feature dimension");
    return subblock_forward(subblock_forward(x, p.intra, ChunkAxis::intra, ctx), p.inter, ChunkAxis::inter, ctx);
}

Tensor backbone_forward(const Tensor& u, const std::vector<StageParams>& stages, const ForwardContext& ctx) {
    Tensor h = u;
    for (std::size_t r = 0; r < stages.size(); ++r) {
        const auto& s = stages[r];
        if (s.proj_weight.dim(1) != h.dim(0))
            throw ConfigError("backbone_forward: stage " + std::to_string(r) + " expects " +
                              std::to_string(s.proj_weight.dim(1)) + " input features, got " +
                              std::to_string(h.dim(0)));
        h = layer_norm(h, s.norm_scale, s.norm_shift, 1e-5, 0);
        h = pointwise_conv2d(h, s.proj_weight, s.proj_bias);
        for (const auto& b : s.blocks) h = block_forward(h, b, ctx);
    }
    return h;
}

std::vector<Tensor> mask_head(const Tensor& u_tilde, const Tensor& head_weight, const Tensor& head_bias,
                              const ChunkTensor& layout, std::size_t speakers, std::size_t features) {
    if (head_weight.dim(0) != speakers * features)
        throw ConfigError("mask_head: head maps to " + std::to_string(head_weight.dim(0)) + " features, expected S*N = " +
                          std::to_string(speakers * features));
    Tensor v = pointwise_conv2d(gelu(u_tilde), head_weight, head_bias);
    ChunkTensor stacked = layout;
    stacked.values = v;
    Tensor m = sigmoid(merge(stacked));
    std::vector<Tensor> masks;
    for (std::size_t s = 0; s < speakers; ++s) masks.push_back(slice(m, 0, s * features, features));
    return masks;
}

std::vector<Tensor> separate(const Tensor& y, const DPRCNetModel& model, const ForwardContext& ctx,
                             SeparationTrace* trace) {
    const auto& cfg = model.config;
    FeatureSequence f = encode(y, model.encoder, cfg.stride);
    Tensor h = layer_norm(f.values, model.input_norm_scale, model.input_norm_shift, 1e-5, 0);
    h = pointwise_conv2d(h, model.bottleneck_weight, model.bottleneck_bias);
    ChunkTensor chunks = segment(h, cfg.chunk, cfg.hop);
    Tensor u_tilde = backbone_forward(chunks.values, model.stages, ctx);
    auto masks = mask_head(u_tilde, model.head_weight, model.head_bias, chunks, cfg.speakers, cfg.features);
    std::vector<Tensor> out;
    for (const auto& m : masks) {
        FeatureSequence est = f;
        est.values = mul(m, f.values);
        out.push_back(decode(est, model.decoder));
    }
    if (trace) {
        trace->mixture_features = f;
        trace->chunks = chunks;
        trace->masks = masks;
    }
    return out;
}

std::vector<Waveform> separate(const Waveform& y, const DPRCNetModel& model) {
    auto outs = separate(to_tensor(y), model, ForwardContext{});
    std::vector<Waveform> w;
    for (const auto& t : outs) w.push_back(to_waveform(t, y.sample_rate));
    return w;
}

}  // namespace dprc

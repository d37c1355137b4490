// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dprcnet/errors.hpp"
#include "dprcnet/kernels.hpp"
#include "dprcnet/ops.hpp"

namespace dprc {

using kernels::Trans;

namespace {

// Grad buffer of t when it participates, otherwise a scratch sink.
double* grad_or_scratch(const Tensor& t, std::vector<double>& scratch) {
    if (t.requires_grad()) return t.impl()->grad_buffer().data();
    scratch.assign(t.numel(), 0.0);
    return scratch.data();
}

}  // namespace

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    return Tensor::uniform(std::move(shape), -k, k, rng);
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride, const std::optional<Tensor>& bias) {
    if (x.rank() != 2) throw ShapeError("conv1d: input must be C_in x T");
    if (kernel.rank() != 3) throw ShapeError("conv1d: kernel must be C_out x C_in x L");
    if (stride == 0) throw ConfigError("conv1d: stride must be >= 1");
    const std::size_t cin = x.dim(0), T = x.dim(1), cout = kernel.dim(0), L = kernel.dim(2);
    if (kernel.dim(1) != cin) throw ShapeError("conv1d: kernel input channels differ from input");
    if (T < L)
        throw InputError("conv1d: input of " + std::to_string(T) + " samples is shorter than kernel length " +
                         std::to_string(L));
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw ShapeError("conv1d: bias must have C_out entries");
    const std::size_t K = (T - L) / stride + 1, CL = cin * L;

    // Frame matrix, CL x K.
    auto frames = std::make_shared<std::vector<double>>(CL * K);
    auto xd = x.data();
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t l = 0; l < L; ++l) {
            double* row = frames->data() + (c * L + l) * K;
            const double* src = xd.data() + c * T + l;
            for (std::size_t k = 0; k < K; ++k) row[k] = src[k * stride];
        }
    std::vector<double> out(cout * K, 0.0);
    if (bias)
        for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * K), K, bias->data()[o]);
    kernels::gemm(Trans::no, Trans::no, cout, K, CL, 1.0, kernel.data().data(), CL, frames->data(), K,
                  bias ? 1.0 : 0.0, out.data(), K);

    std::vector<Tensor> parents{x, kernel};
    if (bias) parents.push_back(*bias);
    Tensor b = bias ? *bias : Tensor();
    return Tensor::make_result(
        {cout, K}, std::move(out), "conv1d", std::move(parents),
        [x, kernel, b, frames, cin, T, cout, L, K, CL, stride](std::span<const double> g) {
            if (kernel.requires_grad())
                kernels::gemm(Trans::no, Trans::yes, cout, CL, K, 1.0, g.data(), K, frames->data(), K, 1.0,
                              kernel.impl()->grad_buffer().data(), CL);
            if (b.defined() && b.requires_grad()) {
                auto gb = b.impl()->grad_buffer();
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t k = 0; k < K; ++k) gb[o] += g[o * K + k];
            }
            if (x.requires_grad()) {
                std::vector<double> dframes(CL * K);
                kernels::gemm(Trans::yes, Trans::no, CL, K, cout, 1.0, kernel.data().data(), CL, g.data(), K,
                              0.0, dframes.data(), K);
                auto gx = x.impl()->grad_buffer();
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t l = 0; l < L; ++l) {
                        const double* row = dframes.data() + (c * L + l) * K;
                        double* dst = gx.data() + c * T + l;
                        for (std::size_t k = 0; k < K; ++k) dst[k * stride] += row[k];
                    }
            }
        });
}

Tensor conv_transpose1d(const Tensor& f, const Tensor& kernel, std::size_t stride) {
    if (f.rank() != 2) throw ShapeError("conv_transpose1d: input must be C_in x K");
    if (kernel.rank() != 3) throw ShapeError("conv_transpose1d: kernel must be C_in x C_out x L");
    if (stride == 0) throw ConfigError("conv_transpose1d: stride must be >= 1");
    const std::size_t cin = f.dim(0), K = f.dim(1), cout = kernel.dim(1), L = kernel.dim(2);
    if (kernel.dim(0) != cin) throw ShapeError("conv_transpose1d: kernel input channels differ from input");
    const std::size_t CL = cout * L, T = (K - 1) * stride + L;

    // Per-frame synthesis Y = W^T F, CL x K, then overlap-add.
    std::vector<double> frames(CL * K);
    kernels::gemm(Trans::yes, Trans::no, CL, K, cin, 1.0, kernel.data().data(), CL, f.data().data(), K, 0.0,
                  frames.data(), K);
    std::vector<double> out(cout * T, 0.0);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t l = 0; l < L; ++l) {
            const double* row = frames.data() + (o * L + l) * K;
            double* dst = out.data() + o * T + l;
            for (std::size_t k = 0; k < K; ++k) dst[k * stride] += row[k];
        }
    return Tensor::make_result(
        {cout, T}, std::move(out), "conv_transpose1d", {f, kernel},
        [f, kernel, cin, cout, L, K, CL, T, stride](std::span<const double> g) {
            std::vector<double> dframes(CL * K);
            for (std::size_t o = 0; o < cout; ++o)
                for (std::size_t l = 0; l < L; ++l) {
                    double* row = dframes.data() + (o * L + l) * K;
                    const double* src = g.data() + o * T + l;
                    for (std::size_t k = 0; k < K; ++k) row[k] = src[k * stride];
                }
            if (f.requires_grad())
                kernels::gemm(Trans::no, Trans::no, cin, K, CL, 1.0, kernel.data().data(), CL, dframes.data(), K,
                              1.0, f.impl()->grad_buffer().data(), K);
            if (kernel.requires_grad())
                kernels::gemm(Trans::no, Trans::yes, cin, CL, K, 1.0, f.data().data(), K, dframes.data(), K, 1.0,
                              kernel.impl()->grad_buffer().data(), CL);
        });
}

Tensor pointwise_conv2d(const Tensor& u, const Tensor& kernel, const std::optional<Tensor>& bias) {
    if (kernel.rank() != 2) throw ShapeError("pointwise_conv2d: kernel must be D_out x D_in");
    const std::size_t din = u.dim(0), dout = kernel.dim(0), P = u.numel() / din;
    if (kernel.dim(1) != din)
        throw ShapeError("pointwise_conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input features, tensor has " + std::to_string(din));
    if (bias && (bias->rank() != 1 || bias->dim(0) != dout))
        throw ShapeError("pointwise_conv2d: bias must have D_out entries");
    std::vector<double> out(dout * P);
    if (bias)
        for (std::size_t o = 0; o < dout; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * P), P, bias->data()[o]);
    kernels::gemm(Trans::no, Trans::no, dout, P, din, 1.0, kernel.data().data(), din, u.data().data(), P,
                  bias ? 1.0 : 0.0, out.data(), P);
    Shape os = u.shape();
    os[0] = dout;
    std::vector<Tensor> parents{u, kernel};
    if (bias) parents.push_back(*bias);
    Tensor b = bias ? *bias : Tensor();
    return Tensor::make_result(
        std::move(os), std::move(out), "pointwise_conv2d", std::move(parents),
        [u, kernel, b, din, dout, P](std::span<const double> g) {
            if (u.requires_grad())
                kernels::gemm(Trans::yes, Trans::no, din, P, dout, 1.0, kernel.data().data(), din, g.data(), P, 1.0,
                              u.impl()->grad_buffer().data(), P);
            if (kernel.requires_grad())
                kernels::gemm(Trans::no, Trans::yes, dout, din, P, 1.0, g.data(), P, u.data().data(), P, 1.0,
                              kernel.impl()->grad_buffer().data(), din);
            if (b.defined() && b.requires_grad()) {
                auto gb = b.impl()->grad_buffer();
                for (std::size_t o = 0; o < dout; ++o) {
                    double acc = 0;
                    for (std::size_t q = 0; q < P; ++q) acc += g[o * P + q];
                    gb[o] += acc;
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw ShapeError("linear: weight must be D_out x D_in");
    const std::size_t din = weight.dim(1), dout = weight.dim(0);
    if (x.shape().back() != din)
        throw ShapeError("linear: trailing extent " + std::to_string(x.shape().back()) + " differs from D_in " +
                         std::to_string(din));
    if (bias.rank() != 1 || bias.dim(0) != dout) throw ShapeError("linear: bias must have D_out entries");
    const std::size_t M = x.numel() / din;
    std::vector<double> out(M * dout);
    for (std::size_t m = 0; m < M; ++m) std::copy_n(bias.data().begin(), dout, out.begin() + static_cast<std::ptrdiff_t>(m * dout));
    kernels::gemm(Trans::no, Trans::yes, M, dout, din, 1.0, x.data().data(), din, weight.data().data(), din, 1.0,
                  out.data(), dout);
    Shape os = x.shape();
    os.back() = dout;
    return Tensor::make_result(std::move(os), std::move(out), "linear", {x, weight, bias},
                               [x, weight, bias, M, din, dout](std::span<const double> g) {
                                   if (x.requires_grad())
                                       kernels::gemm(Trans::no, Trans::no, M, din, dout, 1.0, g.data(), dout,
                                                     weight.data().data(), din, 1.0,
                                                     x.impl()->grad_buffer().data(), din);
                                   if (weight.requires_grad())
                                       kernels::gemm(Trans::yes, Trans::no, dout, din, M, 1.0, g.data(), dout,
                                                     x.data().data(), din, 1.0,
                                                     weight.impl()->grad_buffer().data(), din);
                                   if (bias.requires_grad()) {
                                       auto gb = bias.impl()->grad_buffer();
                                       for (std::size_t m = 0; m < M; ++m)
                                           for (std::size_t o = 0; o < dout; ++o) gb[o] += g[m * dout + o];
                                   }
                               });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps,
                  std::optional<std::size_t> axis) {
    const auto& s = x.shape();
    const std::size_t ax = axis.value_or(s.size() - 1);
    if (ax >= s.size()) throw ShapeError("layer_norm: axis out of range");
    if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[ax];
    if (scale.numel() != n || shift.numel() != n)
        throw ShapeError("layer_norm: scale/shift need " + std::to_string(n) + " entries");
    std::vector<double> out(x.numel());
    auto mean = std::make_shared<std::vector<double>>(outer * inner);
    auto rstd = std::make_shared<std::vector<double>>(outer * inner);
    kernels::layer_norm_forward(outer, n, inner, x.data().data(), scale.data().data(), shift.data().data(), eps,
                                out.data(), mean->data(), rstd->data());
    return Tensor::make_result(
        s, std::move(out), "layer_norm", {x, scale, shift},
        [x, scale, shift, mean, rstd, outer, n, inner](std::span<const double> g) {
            std::vector<double> sx, ss, sb;
            double* dx = grad_or_scratch(x, sx);
            double* dscale = grad_or_scratch(scale, ss);
            double* dshift = grad_or_scratch(shift, sb);
            kernels::layer_norm_backward(outer, n, inner, x.data().data(), scale.data().data(), mean->data(),
                                         rstd->data(), g.data(), dx, dscale, dshift);
        });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    kernels::gelu_forward(out.size(), x.data().data(), out.data());
    return Tensor::make_result(x.shape(), std::move(out), "gelu", {x}, [x](std::span<const double> g) {
        kernels::gelu_backward(g.size(), x.data().data(), g.data(), x.impl()->grad_buffer().data());
    });
}

Tensor sigmoid(const Tensor& x) {
    // Clamped one ulp inside (0, 1) so saturated inputs still give interior values.
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double v = xd[i];
        double y;
        if (v >= 0) {
            y = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            y = e / (1.0 + e);
        }
        out[i] = std::clamp(y, lo, hi);
    }
    auto saved = std::make_shared<std::vector<double>>(out);
    return Tensor::make_result(x.shape(), std::move(out), "sigmoid", {x}, [x, saved](std::span<const double> g) {
        auto gx = x.impl()->grad_buffer();
        const auto& y = *saved;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

BiLstmParams BiLstmParams::init(std::size_t input, std::size_t hidden, Rng& rng) {
    auto direction = [&] {
        LstmDirection d;
        d.w_ih = init_uniform({4 * hidden, input}, hidden, rng);
        d.w_hh = init_uniform({4 * hidden, hidden}, hidden, rng);
        std::vector<double> b(4 * hidden, 0.0);
        std::fill_n(b.begin() + static_cast<std::ptrdiff_t>(hidden), hidden, 1.0);
        d.bias = Tensor::from({4 * hidden}, std::move(b));
        return d;
    };
    BiLstmParams p;
    p.fwd = direction();
    p.bwd = direction();
    return p;
}

Tensor bilstm_batched(const Tensor& x, const BiLstmParams& p) {
    if (x.rank() != 3) throw ShapeError("bilstm: input must be D x T x N");
    const std::size_t D = x.dim(0), T = x.dim(1), N = x.dim(2), H = p.hidden();
    for (const auto* d : {&p.fwd, &p.bwd}) {
        if (d->w_ih.rank() != 2 || d->w_ih.dim(0) != 4 * H || d->w_ih.dim(1) != D)
            throw ShapeError("bilstm: w_ih must be 4H x D, got " + shape_str(d->w_ih.shape()) + " for D=" +
                             std::to_string(D));
        if (d->w_hh.dim(0) != 4 * H || d->w_hh.dim(1) != H) throw ShapeError("bilstm: w_hh must be 4H x H");
        if (d->bias.numel() != 4 * H) throw ShapeError("bilstm: bias must have 4H entries");
    }
    const std::size_t TN = T * N;
    struct Saved {
        std::vector<double> c_f, c_b, gates_f, gates_b;
    };
    auto saved = std::make_shared<Saved>();
    saved->c_f.resize(H * TN);
    saved->c_b.resize(H * TN);
    saved->gates_f.resize(4 * H * TN);
    saved->gates_b.resize(4 * H * TN);
    std::vector<double> out(2 * H * TN);
    kernels::LstmShape fs{D, H, T, N, false};
    kernels::LstmShape bs{D, H, T, N, true};
    kernels::lstm_forward(fs, x.data().data(), p.fwd.w_ih.data().data(), p.fwd.w_hh.data().data(),
                          p.fwd.bias.data().data(), out.data(), saved->c_f.data(), saved->gates_f.data());
    kernels::lstm_forward(bs, x.data().data(), p.bwd.w_ih.data().data(), p.bwd.w_hh.data().data(),
                          p.bwd.bias.data().data(), out.data() + H * TN, saved->c_b.data(), saved->gates_b.data());
    auto hsave = std::make_shared<std::vector<double>>(out);
    return Tensor::make_result(
        {2 * H, T, N}, std::move(out), "bilstm",
        {x, p.fwd.w_ih, p.fwd.w_hh, p.fwd.bias, p.bwd.w_ih, p.bwd.w_hh, p.bwd.bias},
        [x, p, saved, hsave, fs, bs, H, TN](std::span<const double> g) {
            std::vector<double> sx;
            double* dx = grad_or_scratch(x, sx);
            auto run = [&](const LstmDirection& d, const kernels::LstmShape& s, std::size_t offset,
                           const std::vector<double>& c, const std::vector<double>& gates) {
                std::vector<double> s1, s2, s3;
                kernels::lstm_backward(s, x.data().data(), d.w_ih.data().data(), d.w_hh.data().data(),
                                       hsave->data() + offset, c.data(), gates.data(), g.data() + offset, dx,
                                       grad_or_scratch(d.w_ih, s1), grad_or_scratch(d.w_hh, s2),
                                       grad_or_scratch(d.bias, s3));
            };
            run(p.fwd, fs, 0, saved->c_f, saved->gates_f);
            run(p.bwd, bs, H * TN, saved->c_b, saved->gates_b);
        });
}

Tensor bilstm(const Tensor& x, const BiLstmParams& p) {
    if (x.rank() != 2) throw ShapeError("bilstm: input must be D x T");
    const std::size_t T = x.dim(1);
    return reshape(bilstm_batched(reshape(x, {x.dim(0), T, 1}), p), {2 * p.hidden(), T});
}

Tensor bilstm_chunks(const Tensor& x, const BiLstmParams& p, ChunkAxis axis) {
    if (x.rank() != 3) throw ShapeError("bilstm_chunks: input must be D x I x J");
    if (axis == ChunkAxis::intra) return bilstm_batched(x, p);
    return permute(bilstm_batched(permute(x, {0, 2, 1}), p), {0, 2, 1});
}

Tensor layer_scale(const Tensor& h, const Tensor& gamma) {
    if (gamma.rank() != 1 || gamma.dim(0) != h.dim(0))
        throw ShapeError("layer_scale: gamma must have one entry per feature");
    Shape gs(h.rank(), 1);
    gs[0] = h.dim(0);
    return mul(h, reshape(gamma, gs));
}

Tensor drop_path_fixed(const Tensor& h, double p, bool keep) {
    if (p < 0 || p >= 1) throw ConfigError("drop_path: probability must lie in [0, 1)");
    return scale(h, keep ? 1.0 / (1.0 - p) : 0.0);
}

Tensor drop_path(const Tensor& h, double p, Mode mode, Rng& rng) {
    if (p < 0 || p >= 1) throw ConfigError("drop_path: probability must lie in [0, 1)");
    if (mode == Mode::eval || p == 0.0) return h;
    std::bernoulli_distribution keep(1.0 - p);
    return drop_path_fixed(h, p, keep(rng));
}

Tensor drop_path_batched(const Tensor& h, double p, Mode mode, Rng& rng) {
    if (p < 0 || p >= 1) throw ConfigError("drop_path: probability must lie in [0, 1)");
    if (mode == Mode::eval || p == 0.0) return h;
    std::bernoulli_distribution keep(1.0 - p);
    std::vector<double> mask(h.dim(0));
    for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
    Shape ms(h.rank(), 1);
    ms[0] = h.dim(0);
    return mul(h, Tensor::from(std::move(ms), std::move(mask)));
}

}  // namespace dprc

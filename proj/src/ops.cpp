// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/ops.hpp"

#include <cmath>
#include <numeric>

#include "dprcnet/errors.hpp"
#include "dprcnet/kernels.hpp"

namespace dprc {

namespace {

// Maps each flat index of `a` to the flat index of `b` under broadcasting.
std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b, const char* op) {
    if (b.size() > a.size())
        throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    Shape bp(a.size() - b.size(), 1);
    bp.insert(bp.end(), b.begin(), b.end());
    for (std::size_t i = 0; i < a.size(); ++i)
        if (bp[i] != a[i] && bp[i] != 1)
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    // Strides of b in a's index space (0 on broadcast axes).
    std::vector<std::size_t> stride(a.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = a.size(); i-- > 0;) {
        stride[i] = bp[i] == 1 ? 0 : s;
        s *= bp[i];
    }
    std::vector<std::size_t> map(shape_numel(a));
    std::vector<std::size_t> idx(a.size(), 0);
    for (std::size_t flat = 0; flat < map.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < a.size(); ++i) off += idx[i] * stride[i];
        map[flat] = off;
        for (std::size_t i = a.size(); i-- > 0;) {
            if (++idx[i] < a[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* op) {
    const auto n = a.numel();
    const bool same = a.shape() == b.shape();
    auto map = same ? std::vector<std::size_t>{} : broadcast_index(a.shape(), b.shape(), op);
    auto bi = [&map, same](std::size_t i) { return same ? i : map[i]; };
    auto ad = a.data();
    auto bd = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i], y = bd[bi(i)];
        out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    return Tensor::make_result(
        a.shape(), std::move(out), op, {a, b},
        [a, b, kind, map = std::move(map), same](std::span<const double> g) {
            auto bi = [&map, same](std::size_t i) { return same ? i : map[i]; };
            if (a.requires_grad()) {
                auto ga = a.impl()->grad_buffer();
                auto bd = b.data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += kind == Binary::mul ? g[i] * bd[bi(i)] : g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.impl()->grad_buffer();
                auto ad = a.data();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double v = kind == Binary::add ? g[i] : kind == Binary::sub ? -g[i] : g[i] * ad[i];
                    gb[bi(i)] += v;
                }
            }
        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= c;
    return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [a, c](std::span<const double> g) {
        auto ga = a.impl()->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += c;
    return Tensor::make_result(a.shape(), std::move(out), "add_scalar", {a},
                               [a](std::span<const double> g) { a.impl()->accumulate(g); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: both operands must be rank 2");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n);
    using kernels::Trans;
    kernels::gemm(Trans::no, Trans::no, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0,
                  out.data(), n);
    return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b},
                               [a, b, m, n, k](std::span<const double> g) {
                                   if (a.requires_grad())
                                       kernels::gemm(Trans::no, Trans::yes, m, k, n, 1.0, g.data(), n,
                                                     b.data().data(), n, 1.0,
                                                     a.impl()->grad_buffer().data(), k);
                                   if (b.requires_grad())
                                       kernels::gemm(Trans::yes, Trans::no, k, n, m, 1.0,
                                                     a.data().data(), k, g.data(), n, 1.0,
                                                     b.impl()->grad_buffer().data(), n);
                               });
}

Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel())
        throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
    std::vector<double> out(t.data().begin(), t.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), "reshape", {t},
                               [t](std::span<const double> g) { t.impl()->accumulate(g); });
}

namespace {

// For output flat index, the source flat index under the permutation.
std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes, Shape& out_shape) {
    const std::size_t r = in.size();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in[i + 1];
    out_shape.resize(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
    std::vector<std::size_t> map(shape_numel(in));
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < map.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[axes[i]];
        map[flat] = src;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

}  // namespace

Tensor permute(const Tensor& t, const std::vector<std::size_t>& axes) {
    const std::size_t r = t.rank();
    if (axes.size() != r) throw ShapeError("permute: axis list length differs from rank");
    std::vector<bool> used(r, false);
    for (auto ax : axes) {
        if (ax >= r || used[ax]) throw ShapeError("permute: not a valid axis ordering");
        used[ax] = true;
    }
    Shape out_shape;
    auto map = permute_map(t.shape(), axes, out_shape);
    auto src = t.data();
    std::vector<double> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = src[map[i]];
    return Tensor::make_result(std::move(out_shape), std::move(out), "permute", {t},
                               [t, map = std::move(map)](std::span<const double> g) {
                                   auto gt = t.impl()->grad_buffer();
                                   for (std::size_t i = 0; i < map.size(); ++i) gt[map[i]] += g[i];
                               });
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
    const auto& s = t.shape();
    if (axis >= s.size()) throw ShapeError("slice: axis out of range");
    if (length == 0 || start + length > s[axis])
        throw ShapeError("slice: range exceeds extent " + std::to_string(s[axis]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape os = s;
    os[axis] = length;
    std::vector<double> out(outer * length * inner);
    auto src = t.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * s[axis] + start) * inner), length * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
    const std::size_t ext = s[axis];
    return Tensor::make_result(std::move(os), std::move(out), "slice", {t},
                               [t, outer, inner, ext, start, length](std::span<const double> g) {
                                   auto gt = t.impl()->grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t q = 0; q < length * inner; ++q)
                                           gt[(o * ext + start) * inner + q] += g[o * length * inner + q];
                               });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape os = parts[0].shape();
    if (axis >= os.size()) throw ShapeError("concat: axis out of range");
    os[axis] = 0;
    for (const auto& p : parts) {
        auto ps = p.shape();
        if (ps.size() != os.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (i != axis && ps[i] != parts[0].dim(i)) throw ShapeError("concat: extent mismatch off the concat axis");
        os[axis] += ps[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= os[i];
    for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
    std::vector<double> out(shape_numel(os));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.dim(axis);
        auto src = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * ext * inner), ext * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * os[axis] + off) * inner));
        off += ext;
    }
    const std::size_t total = os[axis];
    return Tensor::make_result(std::move(os), std::move(out), "concat", parts,
                               [parts, offsets, outer, inner, axis, total](std::span<const double> g) {
                                   for (std::size_t k = 0; k < parts.size(); ++k) {
                                       if (!parts[k].requires_grad()) continue;
                                       const std::size_t ext = parts[k].dim(axis);
                                       auto gp = parts[k].impl()->grad_buffer();
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t q = 0; q < ext * inner; ++q)
                                               gp[o * ext * inner + q] += g[(o * total + offsets[k]) * inner + q];
                                   }
                               });
}

Tensor sum(const Tensor& t) {
    auto d = t.data();
    double acc = std::accumulate(d.begin(), d.end(), 0.0);
    return Tensor::make_result({1}, {acc}, "sum", {t}, [t](std::span<const double> g) {
        auto gt = t.impl()->grad_buffer();
        for (auto& v : gt) v += g[0];
    });
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("dot: shapes differ");
    auto ad = a.data(), bd = b.data();
    double acc = 0;
    for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * bd[i];
    return Tensor::make_result({1}, {acc}, "dot", {a, b}, [a, b](std::span<const double> g) {
        if (a.requires_grad()) {
            auto ga = a.impl()->grad_buffer();
            auto bd = b.data();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bd[i];
        }
        if (b.requires_grad()) {
            auto gb = b.impl()->grad_buffer();
            auto ad = a.data();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * ad[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    if (a.numel() != 1 || b.numel() != 1) throw ShapeError("div: operands must be scalars");
    const double x = a.item(), y = b.item();
    return Tensor::make_result({1}, {x / y}, "div", {a, b}, [a, b, x, y](std::span<const double> g) {
        if (a.requires_grad()) a.impl()->grad_buffer()[0] += g[0] / y;
        if (b.requires_grad()) b.impl()->grad_buffer()[0] -= g[0] * x / (y * y);
    });
}

Tensor log10(const Tensor& a) {
    if (a.numel() != 1) throw ShapeError("log10: operand must be scalar");
    const double x = a.item();
    return Tensor::make_result({1}, {std::log10(x)}, "log10", {a}, [a, x](std::span<const double> g) {
        a.impl()->grad_buffer()[0] += g[0] / (x * std::log(10.0));
    });
}

}  // namespace dprc

// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "dprcnet/errors.hpp"
#include "dprcnet/nn.hpp"
#include "test_util.hpp"

using namespace dprc;
using dprc::test::param;
using dprc::test::probe_loss;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void check_grad(const std::function<Tensor()>& f, std::vector<Tensor> params, double tol = 1e-4) {
    auto r = finite_diff_check(f, std::move(params));
    INFO("worst param " << r.worst_param << " index " << r.worst_index << " analytic " << r.analytic
                        << " numeric " << r.numeric);
    CHECK(r.max_rel_error <= tol);
}

std::vector<Tensor> lstm_tensors(BiLstmParams& p) {
    std::vector<Tensor> out{p.fwd.w_ih, p.fwd.w_hh, p.fwd.bias, p.bwd.w_ih, p.bwd.w_hh, p.bwd.bias};
    for (auto& t : out) t.set_requires_grad();
    return out;
}

// Direct scalar LSTM written out gate by gate; one direction, one sequence.
std::vector<std::vector<double>> lstm_oracle(const std::vector<std::vector<double>>& xs, const LstmDirection& d,
                                             bool reverse) {
    const std::size_t H = d.w_hh.dim(1), D = d.w_ih.dim(1), T = xs.size();
    auto W = d.w_ih.data(), U = d.w_hh.data(), b = d.bias.data();
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h(H, 0.0), c(H, 0.0);
    std::vector<std::vector<double>> out(T, std::vector<double>(H));
    for (std::size_t s = 0; s < T; ++s) {
        const std::size_t t = reverse ? T - 1 - s : s;
        std::vector<double> z(4 * H);
        for (std::size_t r = 0; r < 4 * H; ++r) {
            z[r] = b[r];
            for (std::size_t k = 0; k < D; ++k) z[r] += W[r * D + k] * xs[t][k];
            for (std::size_t k = 0; k < H; ++k) z[r] += U[r * H + k] * h[k];
        }
        for (std::size_t u = 0; u < H; ++u) {
            c[u] = sig(z[H + u]) * c[u] + sig(z[u]) * std::tanh(z[2 * H + u]);
            h[u] = sig(z[3 * H + u]) * std::tanh(c[u]);
        }
        out[t] = h;
    }
    return out;
}

}  // namespace

TEST_CASE("conv1d examples") {
    auto x = Tensor::from({1, 4}, {1, 2, 3, 4});
    auto k = Tensor::from({1, 1, 2}, {1, 1});
    CHECK(values(conv1d(x, k, 2)) == std::vector<double>{3, 7});
    CHECK(values(conv1d(Tensor::zeros({2, 9}), Tensor::uniform({3, 2, 4}, -1, 1, 1), 2)) == std::vector<double>(9, 0.0));
    CHECK(conv1d(Tensor::zeros({1, 32000}), Tensor::zeros({2, 1, 16}), 8).dim(1) == 3999);
    CHECK(values(conv1d(x, k, 1, Tensor::from({1}, {0.5}))) == std::vector<double>{3.5, 5.5, 7.5});
    CHECK_THROWS_AS(conv1d(Tensor::zeros({1, 3}), Tensor::zeros({1, 1, 4}), 1), InputError);
    CHECK_THROWS_AS(conv1d(x, k, 0), ConfigError);
}

TEST_CASE("conv_transpose1d examples") {
    auto f = Tensor::from({1, 2}, {1, 1});
    auto k = Tensor::from({1, 1, 2}, {1, 1});
    CHECK(values(conv_transpose1d(f, k, 2)) == std::vector<double>{1, 1, 1, 1});
    CHECK(values(conv_transpose1d(f, k, 1)) == std::vector<double>{1, 2, 1});
    CHECK(values(conv_transpose1d(Tensor::zeros({3, 5}), Tensor::uniform({3, 1, 4}, -1, 1, 2), 2)) ==
          std::vector<double>(12, 0.0));
}

TEST_CASE("conv1d then conv_transpose1d length arithmetic") {
    for (std::size_t T : {16u, 24u, 100u, 1000u}) {
        auto x = Tensor::zeros({1, T});
        auto f = conv1d(x, Tensor::zeros({4, 1, 16}), 8);
        auto y = conv_transpose1d(f, Tensor::zeros({4, 1, 16}), 8);
        const std::size_t K = (T - 16) / 8 + 1;
        CHECK(f.dim(1) == K);
        CHECK(y.dim(1) == (K - 1) * 8 + 16);
        if ((T - 16) % 8 == 0) CHECK(y.dim(1) == T);
    }
}

TEST_CASE("pointwise_conv2d examples") {
    auto u = Tensor::uniform({3, 4, 5}, -1, 1, 3);
    auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(values(pointwise_conv2d(u, eye)) == values(u));

    auto v = Tensor::zeros({2, 1, 1});
    v.mutable_data()[0] = 3;
    v.mutable_data()[1] = 4;
    CHECK(pointwise_conv2d(v, Tensor::from({1, 2}, {1, 1})).at({0, 0, 0}) == 7.0);

    // Same as a matmul over the flattened positions.
    auto k = Tensor::uniform({2, 3}, -1, 1, 4);
    auto expect = matmul(k, reshape(u, {3, 20}));
    CHECK(test::max_abs_diff(pointwise_conv2d(u, k).data(), expect.data()) <= 1e-14);
    CHECK_THROWS_AS(pointwise_conv2d(u, Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("linear examples") {
    auto x = Tensor::uniform({3, 2}, -1, 1, 5);
    CHECK(values(linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}))) == values(x));
    CHECK(values(linear(Tensor::from({2}, {1, 2}), Tensor::from({1, 2}, {1, 1}), Tensor::from({1}, {1}))) ==
          std::vector<double>{4});
    CHECK_THROWS_AS(linear(x, Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
    auto w = param({4, 2}, 6), b = param({4}, 7), xg = param({3, 2}, 8);
    check_grad([&] { return probe_loss(linear(xg, w, b)); }, {xg, w, b});
}

TEST_CASE("layer_norm examples and properties") {
    auto y = layer_norm(Tensor::from({3}, {1, 2, 3}), Tensor::constant({3}, 1), Tensor::zeros({3}));
    CHECK(y.data()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y.data()[1] == doctest::Approx(0).epsilon(1e-3));
    CHECK(y.data()[2] == doctest::Approx(1.2247).epsilon(1e-3));

    auto c = layer_norm(Tensor::constant({2, 4}, 3.0), Tensor::constant({4}, 1), Tensor::zeros({4}));
    for (double v : c.data()) CHECK(v == 0.0);

    auto x = Tensor::uniform({5, 16}, -3, 3, 9);
    auto n = layer_norm(x, Tensor::constant({16}, 1), Tensor::zeros({16}));
    for (std::size_t r = 0; r < 5; ++r) {
        double m = 0, v = 0;
        for (std::size_t d = 0; d < 16; ++d) m += n.at({r, d}) / 16;
        for (std::size_t d = 0; d < 16; ++d) v += (n.at({r, d}) - m) * (n.at({r, d}) - m) / 16;
        CHECK(std::abs(m) <= 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
    auto shifted = layer_norm(add_scalar(x, 7.5), Tensor::constant({16}, 1), Tensor::zeros({16}));
    CHECK(test::max_abs_diff(shifted.data(), n.data()) <= 1e-9);

    // Leading-axis normalization equals trailing-axis normalization of the transpose.
    auto u = Tensor::uniform({6, 3, 4}, -2, 2, 10);
    auto sc = Tensor::uniform({6}, 0.5, 1.5, 11), sh = Tensor::uniform({6}, -1, 1, 12);
    auto a0 = layer_norm(u, sc, sh, 1e-5, 0);
    auto at = permute(layer_norm(permute(u, {1, 2, 0}), sc, sh), {2, 0, 1});
    CHECK(test::max_abs_diff(a0.data(), at.data()) <= 1e-12);

    auto xg = param({3, 5}, 13, -2, 2), s = param({5}, 14, 0.5, 1.5), b = param({5}, 15);
    check_grad([&] { return probe_loss(layer_norm(xg, s, b)); }, {xg, s, b});
    auto ug = param({4, 3, 2}, 16, -2, 2), s0 = param({4}, 17, 0.5, 1.5), b0 = param({4}, 18);
    check_grad([&] { return probe_loss(layer_norm(ug, s0, b0, 1e-5, 0)); }, {ug, s0, b0});
}

TEST_CASE("gelu examples") {
    auto y = gelu(Tensor::from({3}, {0, 1, -10}));
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == doctest::Approx(0.8413).epsilon(1e-3));
    CHECK(std::abs(y.data()[2]) < 1e-8);
    auto x = param({7}, 19, -4, 4);
    check_grad([&] { return probe_loss(gelu(x)); }, {x});
}

TEST_CASE("sigmoid examples") {
    auto y = sigmoid(Tensor::from({5}, {0, 2.5, -2.5, 100, -800}));
    CHECK(y.data()[0] == 0.5);
    CHECK(y.data()[1] + y.data()[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y.data()[3] < 1.0);
    CHECK(y.data()[3] > 1.0 - 1e-10);
    CHECK(y.data()[4] > 0.0);
    for (double v : y.data()) CHECK(std::isfinite(v));
    auto x = param({6}, 20, -5, 5);
    check_grad([&] { return probe_loss(sigmoid(x)); }, {x});
}

TEST_CASE("bilstm with zero parameters outputs zeros") {
    Rng rng(21);
    auto p = BiLstmParams::init(3, 2, rng);
    for (auto* t : {&p.fwd.w_ih, &p.fwd.w_hh, &p.fwd.bias, &p.bwd.w_ih, &p.bwd.w_hh, &p.bwd.bias})
        for (double& v : t->mutable_data()) v = 0;
    auto y = bilstm(Tensor::uniform({3, 6}, -5, 5, 22), p);
    CHECK(y.shape() == Shape{4, 6});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("bilstm matches a scalar gate-by-gate oracle") {
    Rng rng(23);
    auto p = BiLstmParams::init(3, 4, rng);
    auto x = Tensor::uniform({3, 5}, -1, 1, 24);
    std::vector<std::vector<double>> xs(5, std::vector<double>(3));
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t d = 0; d < 3; ++d) xs[t][d] = x.at({d, t});
    auto f = lstm_oracle(xs, p.fwd, false), b = lstm_oracle(xs, p.bwd, true);
    auto y = bilstm(x, p);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t u = 0; u < 4; ++u) {
            CHECK(y.at({u, t}) == doctest::Approx(f[t][u]).epsilon(1e-13));
            CHECK(y.at({4 + u, t}) == doctest::Approx(b[t][u]).epsilon(1e-13));
        }
}

TEST_CASE("bilstm direction symmetry") {
    Rng rng(25);
    auto p = BiLstmParams::init(2, 3, rng);
    auto x = Tensor::uniform({2, 6}, -1, 1, 26);
    auto rev = [](const Tensor& t) {
        std::vector<double> v(t.numel());
        const std::size_t R = t.dim(0), T = t.dim(1);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t s = 0; s < T; ++s) v[r * T + s] = t.at({r, T - 1 - s});
        return Tensor::from(t.shape(), v);
    };
    BiLstmParams swapped{p.bwd, p.fwd};
    auto y = bilstm(x, p), ys = rev(bilstm(rev(x), swapped));
    // Swapped direction halves.
    auto expect = concat({slice(ys, 0, 3, 3), slice(ys, 0, 0, 3)}, 0);
    CHECK(test::max_abs_diff(y.data(), expect.data()) <= 1e-14);
}

TEST_CASE("bilstm output extent is 2H for any input extent") {
    Rng rng(27);
    for (std::size_t D : {1u, 2u, 7u}) {
        auto p = BiLstmParams::init(D, 5, rng);
        CHECK(bilstm(Tensor::zeros({D, 3}), p).dim(0) == 10);
    }
}

TEST_CASE("bilstm gradients") {
    Rng rng(28);
    auto p = BiLstmParams::init(3, 2, rng);
    auto w = lstm_tensors(p);
    auto x = param({3, 4}, 29);
    std::vector<Tensor> all{x};
    all.insert(all.end(), w.begin(), w.end());
    check_grad([&] { return probe_loss(bilstm(x, p)); }, all);
}

TEST_CASE("bilstm over chunk axes") {
    Rng rng(30);
    auto p = BiLstmParams::init(2, 3, rng);
    auto x = Tensor::uniform({2, 4, 3}, -1, 1, 31);
    auto intra = bilstm_chunks(x, p, ChunkAxis::intra);
    auto inter = bilstm_chunks(x, p, ChunkAxis::inter);
    CHECK(intra.shape() == Shape{6, 4, 3});
    CHECK(inter.shape() == Shape{6, 4, 3});
    // intra: column j is the sequence x[:, :, j]; inter: row i is x[:, i, :].
    for (std::size_t j = 0; j < 3; ++j) {
        auto seq = reshape(slice(x, 2, j, 1), {2, 4});
        auto y = bilstm(seq, p);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t i = 0; i < 4; ++i) CHECK(intra.at({r, i, j}) == doctest::Approx(y.at({r, i})).epsilon(1e-13));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        auto seq = reshape(slice(x, 1, i, 1), {2, 3});
        auto y = bilstm(seq, p);
        for (std::size_t r = 0; r < 6; ++r)
            for (std::size_t j = 0; j < 3; ++j) CHECK(inter.at({r, i, j}) == doctest::Approx(y.at({r, j})).epsilon(1e-13));
    }
    auto w = lstm_tensors(p);
    auto xg = param({2, 3, 2}, 32);
    std::vector<Tensor> all{xg};
    all.insert(all.end(), w.begin(), w.end());
    check_grad([&] { return probe_loss(bilstm_chunks(xg, p, ChunkAxis::intra)); }, all);
    check_grad([&] { return probe_loss(bilstm_chunks(xg, p, ChunkAxis::inter)); }, all);
}

TEST_CASE("lstm init recipe") {
    Rng rng(33);
    auto p = BiLstmParams::init(5, 4, rng);
    const double k = 1.0 / std::sqrt(4.0);
    for (const auto* d : {&p.fwd, &p.bwd}) {
        for (double v : d->w_ih.data()) CHECK(std::abs(v) <= k);
        for (double v : d->w_hh.data()) CHECK(std::abs(v) <= k);
        for (std::size_t r = 0; r < 16; ++r) CHECK(d->bias.data()[r] == (r >= 4 && r < 8 ? 1.0 : 0.0));
    }
}

TEST_CASE("layer_scale examples") {
    auto h = Tensor::constant({3, 2, 2}, 1.0);
    for (double v : values(layer_scale(h, Tensor::zeros({3})))) CHECK(v == 0.0);
    CHECK(values(layer_scale(h, Tensor::constant({3}, 1.0))) == values(h));
    double m = 0;
    for (double v : values(layer_scale(h, Tensor::constant({3}, 1e-6)))) m = std::max(m, std::abs(v));
    CHECK(m == 1e-6);
    auto hg = param({3, 2, 2}, 34), g = param({3}, 35);
    check_grad([&] { return probe_loss(layer_scale(hg, g)); }, {hg, g});
}

TEST_CASE("drop_path examples") {
    Rng rng(36);
    auto h = Tensor::uniform({2, 3}, -1, 1, 37);
    CHECK(values(drop_path(h, 0.0, Mode::train, rng)) == values(h));
    CHECK(values(drop_path(h, 0.7, Mode::eval, rng)) == values(h));
    CHECK_THROWS_AS(drop_path(h, 1.0, Mode::train, rng), ConfigError);
    CHECK_THROWS_AS(drop_path(h, -0.1, Mode::train, rng), ConfigError);

    // Monte-Carlo expectation.
    std::vector<double> acc(h.numel(), 0.0);
    const int draws = 10000;
    for (int n = 0; n < draws; ++n) {
        auto y = drop_path(h, 0.3, Mode::train, rng);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += y.data()[i] / draws;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) CHECK(std::abs(acc[i] - h.data()[i]) <= 0.03 * std::abs(h.data()[i]));

    for (double v : values(drop_path_fixed(h, 0.3, false))) CHECK(v == 0.0);
    auto kept = drop_path_fixed(h, 0.25, true);
    for (std::size_t i = 0; i < h.numel(); ++i) CHECK(kept.data()[i] == doctest::Approx(h.data()[i] / 0.75));

    auto hg = param({2, 3}, 38);
    check_grad([&] { return probe_loss(drop_path_fixed(hg, 0.3, true)); }, {hg});
}

TEST_CASE("batched drop_path decides per sample") {
    Rng rng(39);
    auto h = Tensor::constant({64, 5}, 1.0);
    auto y = drop_path_batched(h, 0.5, Mode::train, rng);
    std::size_t dropped = 0;
    for (std::size_t s = 0; s < 64; ++s) {
        const double first = y.at({s, 0});
        for (std::size_t i = 1; i < 5; ++i) CHECK(y.at({s, i}) == first);
        CHECK((first == 0.0 || first == 2.0));
        dropped += first == 0.0;
    }
    CHECK(dropped > 0);
    CHECK(dropped < 64);
    CHECK(values(drop_path_batched(h, 0.5, Mode::eval, rng)) == values(h));
}

TEST_CASE("convolution gradients") {
    auto x = param({2, 9}, 40), k = param({3, 2, 4}, 41), b = param({3}, 42);
    check_grad([&] { return probe_loss(conv1d(x, k, 2, b)); }, {x, k, b});
    check_grad([&] { return probe_loss(conv1d(x, k, 3)); }, {x, k});
    auto f = param({3, 4}, 43), kt = param({3, 2, 4}, 44);
    check_grad([&] { return probe_loss(conv_transpose1d(f, kt, 2)); }, {f, kt});
    check_grad([&] { return probe_loss(conv_transpose1d(f, kt, 4)); }, {f, kt});
    auto u = param({3, 2, 4}, 45), pk = param({5, 3}, 46), pb = param({5}, 47);
    check_grad([&] { return probe_loss(pointwise_conv2d(u, pk, pb)); }, {u, pk, pb});
}

TEST_CASE("init_uniform bounds and determinism") {
    Rng a(50), b(50);
    auto t = init_uniform({8, 4}, 4, a), u = init_uniform({8, 4}, 4, b);
    CHECK(values(t) == values(u));
    for (double v : t.data()) CHECK(std::abs(v) <= 0.5);
}

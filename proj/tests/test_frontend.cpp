// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "dprcnet/errors.hpp"
#include "dprcnet/frontend.hpp"
#include "test_util.hpp"

using namespace dprc;
using dprc::test::param;
using dprc::test::probe_loss;

TEST_CASE("frame arithmetic") {
    CHECK(frame_count(32000, 16, 8) == 3999);
    CHECK(padded_length(32000, 16, 8) == 32000);
    CHECK(padded_length(32001, 16, 8) == 32008);
    CHECK(padded_length(5, 16, 8) == 16);
    std::size_t prev = 0;
    for (std::size_t T = 1; T < 200; ++T) {
        const std::size_t K = frame_count(T, 16, 8), Tp = padded_length(T, 16, 8);
        CHECK(Tp >= T);
        CHECK((Tp - 16) % 8 == 0);
        CHECK(Tp - T < 8 + (T < 16 ? 16 : 0));
        CHECK(K == (Tp - 16) / 8 + 1);
        CHECK(K >= prev);
        prev = K;
    }
}

TEST_CASE("encode examples") {
    auto kernel = Tensor::uniform({4, 1, 16}, -1, 1, 1);
    auto f = encode(Tensor::zeros({32000}), kernel, 8);
    CHECK(f.frames() == 3999);
    CHECK(f.original_length == 32000);
    for (double v : f.values.data()) CHECK(v == 0.0);

    auto y = Tensor::uniform({100}, -1, 1, 2);
    auto f1 = encode(y, kernel, 8), f2 = encode(scale(y, 2.0), kernel, 8);
    for (std::size_t i = 0; i < f1.values.numel(); ++i) CHECK(f2.values.data()[i] == doctest::Approx(2 * f1.values.data()[i]));

    CHECK_THROWS_AS(encode(Waveform{}, kernel, 8), InputError);
    CHECK_THROWS_AS(to_tensor(Waveform{}), InputError);
}

TEST_CASE("encode and decode are linear") {
    auto ke = Tensor::uniform({5, 1, 8}, -1, 1, 3), kd = Tensor::uniform({5, 1, 8}, -1, 1, 4);
    auto y = Tensor::uniform({77}, -1, 1, 5), z = Tensor::uniform({77}, -1, 1, 6);
    const double a = 0.7, b = -1.3;
    auto lhs = encode(add(scale(y, a), scale(z, b)), ke, 4);
    auto fy = encode(y, ke, 4), fz = encode(z, ke, 4);
    auto rhs = add(scale(fy.values, a), scale(fz.values, b));
    CHECK(test::max_abs_diff(lhs.values.data(), rhs.data()) <= 1e-12);

    FeatureSequence mix = fy;
    mix.values = add(scale(fy.values, a), scale(fz.values, b));
    auto d_lhs = decode(mix, kd);
    auto d_rhs = add(scale(decode(fy, kd), a), scale(decode(fz, kd), b));
    CHECK(test::max_abs_diff(d_lhs.data(), d_rhs.data()) <= 1e-12);
}

TEST_CASE("decode examples") {
    auto ke = Tensor::uniform({4, 1, 16}, -1, 1, 7), kd = Tensor::uniform({4, 1, 16}, -1, 1, 8);
    for (std::size_t T : {16u, 17u, 100u, 1001u}) {
        auto f = encode(Tensor::uniform({T}, -1, 1, T), ke, 8);
        CHECK(decode(f, kd).numel() == T);
        FeatureSequence zero = f;
        zero.values = Tensor::zeros(f.values.shape());
        for (double v : test::values(decode(zero, kd))) CHECK(v == 0.0);
    }

    FeatureSequence bad;
    bad.values = Tensor::zeros({4, 3});
    bad.frame_length = 16;
    bad.stride = 8;
    CHECK_THROWS_AS(decode(bad, kd), ContractError);
}

TEST_CASE("non-overlapping identity filter reproduces the waveform") {
    const std::size_t L = 4;
    auto k = Tensor::zeros({1, 1, L});
    k.mutable_data()[0] = 1.0;
    auto y = Tensor::uniform({20}, -1, 1, 9);
    auto f = encode(y, k, L);
    auto r = decode(f, k);
    for (std::size_t t = 0; t < 20; ++t) CHECK(r.data()[t] == (t % L == 0 ? y.data()[t] : 0.0));

    // With N = L unit kernels every sample comes back.
    auto eye = Tensor::zeros({L, 1, L});
    for (std::size_t n = 0; n < L; ++n) eye.mutable_data()[n * L + n] = 1.0;
    auto full = decode(encode(y, eye, L), eye);
    CHECK(test::max_abs_diff(full.data(), y.data()) == 0.0);
}

TEST_CASE("frontend gradients") {
    auto y = param({19}, 10), ke = param({3, 1, 6}, 11), kd = param({3, 1, 6}, 12);
    auto r = finite_diff_check([&] { return probe_loss(decode(encode(y, ke, 3), kd)); }, {y, ke, kd});
    CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("waveform conversions") {
    Waveform w{{0.1, -0.2, 0.3}, 16000};
    auto t = to_tensor(w);
    CHECK(t.shape() == Shape{3});
    auto back = to_waveform(t, 16000);
    CHECK(back.samples == w.samples);
    CHECK(back.sample_rate == 16000);
}

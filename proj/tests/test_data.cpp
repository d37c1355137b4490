// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "dprcnet/data.hpp"
#include "dprcnet/errors.hpp"

using namespace dprc;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t u32_at(const std::vector<char>& b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[off + static_cast<std::size_t>(i)]);
    return v;
}

double rms(const Waveform& w) {
    double s = 0;
    for (double x : w.samples) s += x * x;
    return std::sqrt(s / static_cast<double>(w.size()));
}

// Fraction of spectral energy with |f| in [lo, hi], by direct DFT summation.
double band_fraction(const Waveform& w, double lo, double hi) {
    const std::size_t n = w.size();
    double in = 0, total = 0;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        std::complex<double> acc = 0;
        const double step = -2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        // Rotate a phasor instead of calling sin/cos per sample; renormalize to bound drift.
        std::complex<double> ph = 1, rot = std::polar(1.0, step);
        for (std::size_t t = 0; t < n; ++t) {
            acc += w.samples[t] * ph;
            ph *= rot;
            if (t % 256 == 255) ph = std::polar(1.0, step * static_cast<double>(t + 1));
        }
        const double e = std::norm(acc) * ((k == 0 || 2 * k == n) ? 1.0 : 2.0);
        const double f = static_cast<double>(k) * w.sample_rate / static_cast<double>(n);
        total += e;
        if (f >= lo && f <= hi) in += e;
    }
    return in / total;
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("dprc_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("synth_source examples") {
    const SourceKind kinds[] = {BandNoise{300, 1200}, BandNoise{1800, 3400}, Harmonic{220, 8}};
    for (const auto& k : kinds) {
        auto a = synth_source(k, 1.0, 8000, 42), b = synth_source(k, 1.0, 8000, 42), c = synth_source(k, 1.0, 8000, 43);
        CHECK(a.samples == b.samples);
        CHECK(a.samples != c.samples);
        CHECK(a.size() == 8000);
        CHECK(a.sample_rate == 8000);
        CHECK(std::abs(rms(a) - 1.0) <= 1e-6);
    }
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        CHECK(band_fraction(synth_source(BandNoise{300, 1200}, 1.0, 8000, seed), 300, 1200) >= 0.9);
        CHECK(band_fraction(synth_source(BandNoise{1800, 3400}, 1.0, 8000, seed), 1800, 3400) >= 0.9);
    }
    CHECK_THROWS_AS(synth_source(BandNoise{300, 4000}, 1.0, 8000, 1), InputError);
    CHECK_THROWS_AS(synth_source(BandNoise{1200, 300}, 1.0, 8000, 1), InputError);
    CHECK_THROWS_AS(synth_source(BandNoise{0, 300}, 1.0, 8000, 1), InputError);
    CHECK_THROWS_AS(synth_source(BandNoise{}, 0.0, 8000, 1), InputError);
    CHECK_THROWS_AS(synth_source(Harmonic{5000, 3}, 1.0, 8000, 1), InputError);
}

TEST_CASE("mix_at_snr examples") {
    Waveform s1{{1, -1, 1, -1}, 8000}, s2{{1, 1, -1, -1}, 8000};
    auto m0 = mix_at_snr(s1, s2, 0.0, 1);
    CHECK(m0.gain == doctest::Approx(1.0).epsilon(1e-15));
    auto m20 = mix_at_snr(s1, s2, 20.0, 1);
    CHECK(m20.gain == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(m20.snr_db == 20.0);
    CHECK(m20.sources[1].samples[0] == doctest::Approx(0.1));

    auto a = synth_source(BandNoise{}, 0.5, 8000, 5), b = synth_source(Harmonic{}, 0.5, 8000, 6);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = mix_at_snr(a, b, seed);
        CHECK(m.snr_db >= -5.0);
        CHECK(m.snr_db <= 5.0);
        double p1 = 0, p2 = 0, worst = 0;
        for (std::size_t t = 0; t < a.size(); ++t) {
            p1 += m.sources[0].samples[t] * m.sources[0].samples[t];
            p2 += m.sources[1].samples[t] * m.sources[1].samples[t];
            worst = std::max(worst, std::abs(m.mixture.samples[t] - m.sources[0].samples[t] - m.sources[1].samples[t]));
        }
        CHECK(10 * std::log10(p1 / p2) == doctest::Approx(m.snr_db).epsilon(1e-9));
        CHECK(worst <= 1e-12);
    }

    CHECK_THROWS_AS(mix_at_snr(s1, Waveform{{0, 0, 0, 0}, 8000}, 0.0, 1), InputError);
    CHECK_THROWS_AS(mix_at_snr(s1, Waveform{{1, 1}, 8000}, 0.0, 1), InputError);
}

TEST_CASE("drawn SNRs are uniform on [-5, 5]") {
    const std::size_t n = 10000;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = draw_snr_db(i);
    std::sort(v.begin(), v.end());
    double d = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cdf = (v[i] + 5.0) / 10.0;
        d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
    }
    CHECK(v.front() >= -5.0);
    CHECK(v.back() <= 5.0);
    CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("wav format examples") {
    auto dir = scratch("wav");
    Waveform w = synth_source(Harmonic{}, 1.0, 8000, 7);
    for (double& x : w.samples) x *= 0.2;
    CHECK(wav_write(w, dir / "a.wav") == 0);
    auto bytes = slurp(dir / "a.wav");
    CHECK(bytes.size() == 44 + 16000);
    CHECK(std::memcmp(bytes.data(), "RIFF", 4) == 0);
    CHECK(std::memcmp(bytes.data() + 8, "WAVE", 4) == 0);
    CHECK(u32_at(bytes, 4) == bytes.size() - 8);
    CHECK(std::memcmp(bytes.data() + 36, "data", 4) == 0);
    CHECK(u32_at(bytes, 40) == 16000);
    CHECK(u32_at(bytes, 24) == 8000);

    auto r = wav_read(dir / "a.wav");
    CHECK(r.sample_rate == 8000);
    REQUIRE(r.size() == w.size());
    double worst = 0;
    for (std::size_t t = 0; t < w.size(); ++t) worst = std::max(worst, std::abs(r.samples[t] - w.samples[t]));
    CHECK(worst <= 1.0 / 32767);

    // Exact values survive; out-of-range values clip.
    Waveform edge{{1.0, -1.0, 0.0, 1.5, -2.0}, 16000};
    CHECK(wav_write(edge, dir / "edge.wav") == 2);
    auto e = wav_read(dir / "edge.wav");
    CHECK(e.sample_rate == 16000);
    CHECK(e.samples == std::vector<double>{1.0, -1.0, 0.0, 1.0, -1.0});
    fs::remove_all(dir);
}

TEST_CASE("wav_read rejects malformed files") {
    auto dir = scratch("bad");
    wav_write(Waveform{std::vector<double>(100, 0.1), 8000}, dir / "good.wav");
    auto good = slurp(dir / "good.wav");

    auto stereo = good;
    stereo[22] = 2;
    spit(dir / "stereo.wav", stereo);
    try {
        wav_read(dir / "stereo.wav");
        FAIL("expected FormatError");
    } catch (const FormatError& err) {
        CHECK(std::string(err.what()).find("channel") != std::string::npos);
    }

    auto truncated = good;
    truncated.resize(good.size() - 10);
    spit(dir / "trunc.wav", truncated);
    CHECK_THROWS_AS(wav_read(dir / "trunc.wav"), FormatError);

    auto float_fmt = good;
    float_fmt[20] = 3;
    spit(dir / "float.wav", float_fmt);
    CHECK_THROWS_AS(wav_read(dir / "float.wav"), FormatError);

    auto not_riff = good;
    not_riff[0] = 'X';
    spit(dir / "x.wav", not_riff);
    CHECK_THROWS_AS(wav_read(dir / "x.wav"), FormatError);

    CHECK_THROWS_AS(wav_read(dir / "missing.wav"), IoError);
    CHECK_THROWS_AS(wav_write(Waveform{{0.1}, 8000}, dir / "no" / "such" / "dir.wav"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("manifest round trip and errors") {
    auto dir = scratch("manifest");
    Manifest m;
    m.sample_rate = 8000;
    m.entries = {{"mix/a.wav", "s1/a.wav", "s2/a.wav", 1.5, 17}, {"mix/b.wav", "s1/b.wav", "s2/b.wav", 0.1, 18446744073709551615ull}};
    write_manifest(m, dir / "m.tsv");
    auto r = read_manifest(dir / "m.tsv");
    CHECK(r.sample_rate == 8000);
    CHECK(r.base_dir == dir);
    REQUIRE(r.entries.size() == 2);
    CHECK(r.entries[0].mixture == "mix/a.wav");
    CHECK(r.entries[1].duration_s == 0.1);
    CHECK(r.entries[1].seed == 18446744073709551615ull);

    std::ofstream(dir / "bad.tsv") << "a\tb\tc\n";
    try {
        read_manifest(dir / "bad.tsv");
        FAIL("expected FormatError");
    } catch (const FormatError& err) {
        CHECK(std::string(err.what()).find("bad.tsv:1") != std::string::npos);
    }
    std::ofstream(dir / "bad2.tsv") << "a\tb\tc\tx\t1\n";
    CHECK_THROWS_AS(read_manifest(dir / "bad2.tsv"), FormatError);
    CHECK_THROWS_AS(read_manifest(dir / "none.tsv"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("build_dataset examples") {
    auto d1 = scratch("ds1"), d2 = scratch("ds2");
    auto m = build_dataset(10, 0.5, d1, 3);
    build_dataset(10, 0.5, d2, 3);
    CHECK(m.entries.size() == 10);

    std::size_t wavs = 0;
    for (const auto& f : fs::recursive_directory_iterator(d1)) {
        if (f.path().extension() != ".wav") continue;
        ++wavs;
        CHECK(slurp(f.path()) == slurp(d2 / fs::relative(f.path(), d1)));
    }
    CHECK(wavs == 30);
    CHECK(slurp(d1 / "manifest.tsv") == slurp(d2 / "manifest.tsv"));

    auto loaded = load_samples(read_manifest(d1 / "manifest.tsv"));
    auto memory = synth_dataset(10, 0.5, 3);
    REQUIRE(loaded.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& s = loaded[i];
        CHECK(s.mixture.size() == 4000);
        double identity = 0, drift = 0;
        for (std::size_t t = 0; t < s.mixture.size(); ++t) {
            identity = std::max(identity, std::abs(s.mixture.samples[t] - s.sources[0].samples[t] - s.sources[1].samples[t]));
            drift = std::max(drift, std::abs(s.mixture.samples[t] - memory[i].mixture.samples[t]));
        }
        CHECK(identity <= 2.0 / 32767);
        CHECK(drift <= 1.0 / 32767);

        double exact = 0;
        for (std::size_t t = 0; t < memory[i].mixture.size(); ++t)
            exact = std::max(exact, std::abs(memory[i].mixture.samples[t] - memory[i].sources[0].samples[t] -
                                             memory[i].sources[1].samples[t]));
        CHECK(exact <= 1e-12);
    }

    // Distinct seeds give distinct corpora.
    CHECK(synth_dataset(1, 0.5, 4)[0].mixture.samples != memory[0].mixture.samples);
    CHECK_THROWS_AS(build_dataset(0, 0.5, d1, 3), InputError);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

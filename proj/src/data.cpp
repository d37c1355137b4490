// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "dprcnet/errors.hpp"

namespace dprc {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void normalize_rms(std::vector<double>& v) {
    double p = 0;
    for (double x : v) p += x * x;
    const double rms = std::sqrt(p / static_cast<double>(v.size()));
    if (rms == 0) throw InputError("synth_source: generated a silent source");
    for (double& x : v) x /= rms;
}

std::vector<double> bandpass_taps(double lo, double hi, int rate, std::size_t taps) {
    const double pi = std::acos(-1.0);
    const double fl = lo / rate, fh = hi / rate;
    const double mid = static_cast<double>(taps - 1) / 2.0;
    std::vector<double> h(taps);
    for (std::size_t n = 0; n < taps; ++n) {
        const double t = static_cast<double>(n) - mid;
        const double ideal = t == 0 ? 2 * (fh - fl) : (std::sin(2 * pi * fh * t) - std::sin(2 * pi * fl * t)) / (pi * t);
        const double w = 0.42 - 0.5 * std::cos(2 * pi * static_cast<double>(n) / static_cast<double>(taps - 1)) +
                         0.08 * std::cos(4 * pi * static_cast<double>(n) / static_cast<double>(taps - 1));
        h[n] = ideal * w;
    }
    return h;
}

double mean_square(const std::vector<double>& v) {
    double p = 0;
    for (double x : v) p += x * x;
    return p / static_cast<double>(v.size());
}

std::size_t sample_count(double duration_s, int rate) {
    if (!(duration_s > 0)) throw InputError("synth_source: duration must be positive");
    if (rate <= 0) throw InputError("synth_source: sample rate must be positive");
    auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
    if (n == 0) throw InputError("synth_source: duration shorter than one sample");
    return n;
}

}  // namespace

Waveform synth_source(const SourceKind& kind, double duration_s, int sample_rate, std::uint64_t seed) {
    const std::size_t n = sample_count(duration_s, sample_rate);
    const double nyquist = sample_rate / 2.0;
    Rng rng(seed);
    Waveform w;
    w.sample_rate = sample_rate;
    if (const auto* b = std::get_if<BandNoise>(&kind)) {
        if (!(b->lo_hz > 0 && b->lo_hz < b->hi_hz && b->hi_hz < nyquist))
            throw InputError("synth_source: band must satisfy 0 < lo < hi < sample_rate/2");
        constexpr std::size_t taps = 513;
        auto h = bandpass_taps(b->lo_hz, b->hi_hz, sample_rate, taps);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> white(n + taps - 1);
        for (auto& x : white) x = gauss(rng);
        w.samples.assign(n, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            double acc = 0;
            for (std::size_t k = 0; k < taps; ++k) acc += h[k] * white[t + taps - 1 - k];
            w.samples[t] = acc;
        }
    } else {
        const auto& hm = std::get<Harmonic>(kind);
        if (!(hm.f0_hz > 0 && hm.f0_hz < nyquist)) throw InputError("synth_source: f0 must lie in (0, sample_rate/2)");
        if (hm.partials == 0) throw InputError("synth_source: need at least one partial");
        const double pi = std::acos(-1.0);
        std::uniform_real_distribution<double> phase(0.0, 2 * pi);
        w.samples.assign(n, 0.0);
        for (std::size_t k = 1; k <= hm.partials; ++k) {
            const double f = hm.f0_hz * static_cast<double>(k);
            const double ph = phase(rng);
            if (f >= nyquist) break;
            const double amp = 1.0 / static_cast<double>(k);
            for (std::size_t t = 0; t < n; ++t)
                w.samples[t] += amp * std::sin(2 * pi * f * static_cast<double>(t) / sample_rate + ph);
        }
    }
    normalize_rms(w.samples);
    return w;
}

double draw_snr_db(std::uint64_t seed, double lo, double hi) {
    Rng rng(splitmix64(seed ^ 0x5eed5eed5eedULL));
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

MixtureSample mix_at_snr(const Waveform& s1, const Waveform& s2, double snr_db, std::uint64_t seed) {
    if (s1.size() != s2.size()) throw InputError("mix_at_snr: sources differ in length");
    if (s1.samples.empty()) throw InputError("mix_at_snr: empty sources");
    const double p1 = mean_square(s1.samples), p2 = mean_square(s2.samples);
    if (p1 == 0 || p2 == 0) throw InputError("mix_at_snr: silent source");
    const double g = std::sqrt(p1 / (p2 * std::pow(10.0, snr_db / 10.0)));
    MixtureSample m;
    m.snr_db = snr_db;
    m.gain = g;
    m.seed = seed;
    m.sources = {s1, s2};
    for (auto& x : m.sources[1].samples) x *= g;
    m.mixture.sample_rate = s1.sample_rate;
    m.mixture.samples.resize(s1.size());
    for (std::size_t t = 0; t < s1.size(); ++t) m.mixture.samples[t] = m.sources[0].samples[t] + m.sources[1].samples[t];
    return m;
}

MixtureSample mix_at_snr(const Waveform& s1, const Waveform& s2, std::uint64_t seed) {
    return mix_at_snr(s1, s2, draw_snr_db(seed), seed);
}

// ---------------------------------------------------------------------------
// WAV

namespace {

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& b, std::uint16_t v) {
    b.push_back(static_cast<char>(v & 0xff));
    b.push_back(static_cast<char>(v >> 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void write_atomically(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace

std::size_t wav_write(const Waveform& w, const fs::path& path) {
    if (w.sample_rate <= 0) throw InputError("wav_write: sample rate must be positive");
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    std::string b;
    b.reserve(44 + data_bytes);
    b += "RIFF";
    put_u32(b, 36 + data_bytes);
    b += "WAVE";
    b += "fmt ";
    put_u32(b, 16);
    put_u16(b, 1);  // PCM
    put_u16(b, 1);  // mono
    put_u32(b, static_cast<std::uint32_t>(w.sample_rate));
    put_u32(b, static_cast<std::uint32_t>(w.sample_rate) * 2);
    put_u16(b, 2);
    put_u16(b, 16);
    b += "data";
    put_u32(b, data_bytes);
    std::size_t clipped = 0;
    for (double x : w.samples) {
        if (!std::isfinite(x)) throw InputError("wav_write: non-finite sample");
        if (x > 1.0 || x < -1.0) ++clipped;
        const double c = std::clamp(x, -1.0, 1.0);
        put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    }
    write_atomically(path, b);
    return clipped;
}

Waveform wav_read(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& what) { return FormatError(path.string() + ": " + what); };
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0) throw fail("missing RIFF tag");
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw fail("missing WAVE tag");
    std::size_t pos = 12;
    bool have_fmt = false;
    Waveform w;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* h = bytes.data() + pos;
        const std::uint32_t size = get_u32(h + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(h, "fmt ", 4) == 0) {
            if (size < 16 || body + size > bytes.size()) throw fail("fmt chunk truncated");
            const unsigned char* f = bytes.data() + body;
            if (get_u16(f) != 1) throw fail("audio format is not PCM");
            if (get_u16(f + 2) != 1) throw fail("channel count is " + std::to_string(get_u16(f + 2)) + ", expected mono");
            if (get_u16(f + 14) != 16) throw fail("bits per sample is " + std::to_string(get_u16(f + 14)) + ", expected 16");
            w.sample_rate = static_cast<int>(get_u32(f + 4));
            have_fmt = true;
        } else if (std::memcmp(h, "data", 4) == 0) {
            if (!have_fmt) throw fail("data chunk precedes fmt chunk");
            if (body + size > bytes.size()) throw fail("data chunk truncated");
            if (size % 2) throw fail("data chunk size is odd");
            w.samples.resize(size / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto v = static_cast<std::int16_t>(get_u16(bytes.data() + body + 2 * i));
                w.samples[i] = std::max(-1.0, v / 32767.0);
            }
            return w;
        }
        pos = body + size + (size & 1);
    }
    throw fail(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

}  // namespace

void write_manifest(const Manifest& m, const fs::path& path) {
    std::ostringstream os;
    os << "# dprcnet manifest v1\n";
    os << "# sample_rate=" << m.sample_rate << "\n";
    os << "# mixture\tsource1\tsource2\tduration_s\tseed\n";
    for (const auto& e : m.entries)
        os << e.mixture << '\t' << e.source1 << '\t' << e.source2 << '\t' << format_double(e.duration_s) << '\t'
           << e.seed << '\n';
    write_atomically(path, os.str());
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            constexpr std::string_view key = "# sample_rate=";
            if (line.rfind(key, 0) == 0) m.sample_rate = std::stoi(line.substr(key.size()));
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        auto where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() != 5) throw FormatError(where + ": expected 5 tab-separated fields, got " + std::to_string(fields.size()));
        ManifestEntry e{fields[0], fields[1], fields[2], 0.0, 0};
        auto r1 = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(), e.duration_s);
        auto r2 = std::from_chars(fields[4].data(), fields[4].data() + fields[4].size(), e.seed);
        if (r1.ec != std::errc() || r2.ec != std::errc()) throw FormatError(where + ": bad duration or seed field");
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<MixtureSample> load_samples(const Manifest& m) {
    std::vector<MixtureSample> out;
    for (const auto& e : m.entries) {
        MixtureSample s;
        s.mixture = wav_read(m.base_dir / e.mixture);
        s.sources = {wav_read(m.base_dir / e.source1), wav_read(m.base_dir / e.source2)};
        for (const auto* w : {&s.mixture, &s.sources[0], &s.sources[1]}) {
            if (w->sample_rate != m.sample_rate)
                throw FormatError(e.mixture + ": sample rate " + std::to_string(w->sample_rate) +
                                  " differs from manifest rate " + std::to_string(m.sample_rate));
            if (w->size() != s.mixture.size()) throw FormatError(e.mixture + ": component lengths differ");
        }
        s.seed = e.seed;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

MixtureSample make_entry(std::size_t index, double duration_s, std::uint64_t seed, const DatasetOptions& o) {
    const std::uint64_t entry_seed = splitmix64(seed * 0x100000001b3ULL + index);
    auto s1 = synth_source(o.first, duration_s, o.sample_rate, splitmix64(entry_seed ^ 1));
    auto s2 = synth_source(o.second, duration_s, o.sample_rate, splitmix64(entry_seed ^ 2));
    auto m = mix_at_snr(s1, s2, entry_seed);
    double peak = 0;
    for (const auto* w : {&m.mixture, &m.sources[0], &m.sources[1]})
        for (double x : w->samples) peak = std::max(peak, std::abs(x));
    if (peak > o.peak) {
        const double k = o.peak / peak;
        for (auto* w : {&m.mixture, &m.sources[0], &m.sources[1]})
            for (double& x : w->samples) x *= k;
        // Exact identity after scaling.
        for (std::size_t t = 0; t < m.mixture.size(); ++t)
            m.mixture.samples[t] = m.sources[0].samples[t] + m.sources[1].samples[t];
    }
    return m;
}

std::string entry_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.wav", i);
    return buf;
}

}  // namespace

std::vector<MixtureSample> synth_dataset(std::size_t count, double duration_s, std::uint64_t seed,
                                         const DatasetOptions& options) {
    if (count == 0) throw InputError("synth_dataset: count must be >= 1");
    std::vector<MixtureSample> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_entry(i, duration_s, seed, options));
    return out;
}

Manifest build_dataset(std::size_t count, double duration_s, const fs::path& out_dir, std::uint64_t seed,
                       const DatasetOptions& options) {
    if (count == 0) throw InputError("build_dataset: count must be >= 1");
    std::error_code ec;
    for (const char* sub : {"mix", "s1", "s2"}) {
        fs::create_directories(out_dir / sub, ec);
        if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }
    Manifest m;
    m.sample_rate = options.sample_rate;
    m.base_dir = out_dir;
    for (std::size_t i = 0; i < count; ++i) {
        auto s = make_entry(i, duration_s, seed, options);
        const std::string name = entry_name(i);
        ManifestEntry e{"mix/" + name, "s1/" + name, "s2/" + name, duration_s, s.seed};
        wav_write(s.mixture, out_dir / e.mixture);
        wav_write(s.sources[0], out_dir / e.source1);
        wav_write(s.sources[1], out_dir / e.source2);
        m.entries.push_back(std::move(e));
    }
    write_manifest(m, out_dir / "manifest.tsv");
    return m;
}

}  // namespace dprc

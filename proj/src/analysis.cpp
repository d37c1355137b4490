// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dprcnet/config.hpp"
#include "dprcnet/errors.hpp"
#include "dprcnet/training.hpp"

namespace dprc {

namespace {

using u64 = std::uint64_t;

constexpr const char* kAssumptions =
    "one MAC = one multiply-add; biases, activations, norms, mask products and overlap-adds excluded; "
    "Bi-LSTM gates 4*hidden*(D_in+hidden) per step and direction; decoder counted once per speaker";

u64 lstm_params(u64 din, u64 hidden) { return 2 * 4 * hidden * (din + hidden + 1); }

u64 subblock_params(u64 d, u64 hidden) {
    return lstm_params(d, hidden)  // Bi-LSTM
           + 2 * hidden * d + d    // FC back to D
           + 2 * d                 // norm
           + 4 * d * d + 4 * d     // expand
           + 4 * d * d + d         // contract
           + d;                    // gamma
}

// Shared by both counts; positions = I * J when macs are wanted.
void fill(ComplexityReport& r, const ModelConfig& cfg, u64 frames, u64 positions) {
    cfg.validate();
    const u64 N = cfg.features, L = cfg.frame_length, B = cfg.bottleneck, S = cfg.speakers, Hd = cfg.hidden;
    const u64 K = frames, P = positions;
    auto add = [&](std::string name, u64 params, u64 macs) { r.breakdown.push_back({std::move(name), params, macs}); };

    add("encoder", N * L, K * N * L);
    add("input_norm", 2 * N, 0);
    add("bottleneck", N * B + B, K * N * B);
    u64 din = B;
    for (std::size_t s = 0; s < cfg.stage_dims.size(); ++s) {
        const u64 d = cfg.stage_dims[s];
        const std::string prefix = "stage" + std::to_string(s);
        add(prefix + ".proj", 2 * din + din * d + d, P * din * d);
        const u64 subs = 2 * cfg.stage_blocks[s];
        const u64 sub_macs = P * 2 * 4 * Hd * (d + Hd)  // Bi-LSTM
                             + P * 2 * Hd * d             // FC
                             + P * 4 * d * d * 2;         // expand + contract
        add(prefix + ".blocks", subs * subblock_params(d, Hd), subs * sub_macs);
        din = d;
    }
    add("head", din * S * N + S * N, P * din * S * N);
    add("decoder", N * L, S * K * N * L);

    r.total_params = 0;
    r.total_macs = 0;
    for (const auto& it : r.breakdown) {
        r.total_params += it.params;
        r.total_macs += it.macs;
    }
    r.assumptions = kAssumptions;
}

}  // namespace

ComplexityReport count_params(const ModelConfig& cfg) {
    ComplexityReport r;
    fill(r, cfg, 0, 0);
    return r;
}

ComplexityReport estimate_macs(const ModelConfig& cfg, double duration_s, int sample_rate) {
    cfg.validate();
    if (sample_rate <= 0) throw InputError("estimate_macs: sample_rate must be positive");
    if (!(duration_s > 0)) throw InputError("estimate_macs: duration must be positive");
    const double exact = duration_s * sample_rate;
    const auto T = static_cast<std::size_t>(std::llround(exact));
    if (T < cfg.frame_length)
        throw InputError("estimate_macs: " + std::to_string(duration_s) + " s is shorter than one encoder frame of " +
                         std::to_string(cfg.frame_length) + " samples");
    const std::size_t K = frame_count(T, cfg.frame_length, cfg.stride);
    // Same padding arithmetic as segment(): hop-sized front pad, back pad up to a whole hop.
    std::size_t Kp = std::max(cfg.chunk, K + 2 * cfg.hop);
    if ((Kp - cfg.chunk) % cfg.hop) Kp += cfg.hop - (Kp - cfg.chunk) % cfg.hop;
    const std::size_t J = (Kp - cfg.chunk) / cfg.hop + 1;

    ComplexityReport r;
    r.duration_s = duration_s;
    r.sample_rate = sample_rate;
    r.frames = K;
    r.chunks = J;
    fill(r, cfg, K, cfg.chunk * J);
    return r;
}

void print_report(std::ostream& os, const ComplexityReport& r) {
    std::size_t w = 6;
    for (const auto& it : r.breakdown) w = std::max(w, it.module.size());
    const bool macs = r.duration_s > 0;
    os << std::left << std::setw(static_cast<int>(w)) << "module" << "  " << std::right << std::setw(12) << "params";
    if (macs) os << "  " << std::setw(16) << "MACs";
    os << '\n';
    for (const auto& it : r.breakdown) {
        os << std::left << std::setw(static_cast<int>(w)) << it.module << "  " << std::right << std::setw(12) << it.params;
        if (macs) os << "  " << std::setw(16) << it.macs;
        os << '\n';
    }
    os << std::left << std::setw(static_cast<int>(w)) << "total" << "  " << std::right << std::setw(12) << r.total_params;
    if (macs) os << "  " << std::setw(16) << r.total_macs;
    os << '\n';
    os << std::fixed << std::setprecision(3) << "params (M): " << static_cast<double>(r.total_params) / 1e6 << '\n';
    if (macs)
        os << "MACs (G) for " << r.duration_s << " s @ " << r.sample_rate << " Hz: " << static_cast<double>(r.total_macs) / 1e9
           << "  (K=" << r.frames << ", J=" << r.chunks << ")\n";
    os.unsetf(std::ios::floatfield);
    os << "assumptions: " << r.assumptions << '\n';
}

void print_report_kv(std::ostream& os, const ComplexityReport& r) {
    os << "total_params=" << r.total_params << '\n';
    if (r.duration_s > 0) {
        os << "total_macs=" << r.total_macs << '\n'
           << "duration_s=" << r.duration_s << '\n'
           << "sample_rate=" << r.sample_rate << '\n'
           << "frames=" << r.frames << '\n'
           << "chunks=" << r.chunks << '\n';
    }
    for (const auto& it : r.breakdown) {
        os << "params." << it.module << '=' << it.params << '\n';
        if (r.duration_s > 0) os << "macs." << it.module << '=' << it.macs << '\n';
    }
}

EvaluationReport evaluate_manifest(const SeparatorFn& separator, const Manifest& manifest, std::size_t speakers,
                                   std::uint64_t config_hash) {
    if (speakers != 2)
        throw ConfigError("evaluate_manifest: separator produces " + std::to_string(speakers) +
                          " outputs but manifest entries hold 2 sources");
    if (manifest.entries.empty()) throw InputError("evaluate_manifest: manifest has no entries");
    EvaluationReport rep;
    rep.config_hash = config_hash;
    const auto samples = load_samples(manifest);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        auto est = separator(s.mixture);
        if (est.size() != speakers)
            throw ConfigError("evaluate_manifest: separator returned " + std::to_string(est.size()) + " estimates, expected " +
                              std::to_string(speakers));
        std::vector<std::vector<double>> refs;
        for (const auto& w : s.sources) refs.push_back(w.samples);
        auto score = score_separation(est, refs, s.mixture.samples);
        rep.entries.push_back({k, manifest.entries[k].mixture, score.si_sdri, score.sdri});
        rep.mean_si_sdri += score.si_sdri;
        rep.mean_sdri += score.sdri;
    }
    rep.mean_si_sdri /= static_cast<double>(rep.entries.size());
    rep.mean_sdri /= static_cast<double>(rep.entries.size());
    return rep;
}

EvaluationReport evaluate_manifest(const DPRCNetModel& model, const Manifest& manifest) {
    auto fn = [&model](const Waveform& y) {
        NoGradGuard no_grad;
        std::vector<std::vector<double>> out;
        for (auto& w : separate(y, model)) out.push_back(std::move(w.samples));
        return out;
    };
    return evaluate_manifest(fn, manifest, model.config.speakers, config_hash(model.config));
}

void print_evaluation(std::ostream& os, const EvaluationReport& r) {
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << r.config_hash;
    os << "# dprcnet evaluation  config_hash=" << hash.str() << "  entries=" << r.entries.size() << '\n';
    os << "# entry\tid\tsi_sdri_db\tsdri_db\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& e : r.entries) os << e.index << '\t' << e.id << '\t' << e.si_sdri << '\t' << e.sdri << '\n';
    os << "mean\t-\t" << r.mean_si_sdri << '\t' << r.mean_sdri << '\n';
    os.unsetf(std::ios::floatfield);
}

}  // namespace dprc

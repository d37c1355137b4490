// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dprcnet/checkpoint.hpp"
#include "dprcnet/errors.hpp"
#include "dprcnet/ops.hpp"

namespace dprc {

void TrainConfig::validate() const {
    if (!(lr0 > 0)) throw ConfigError("TrainConfig: lr0 must be positive");
    if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (decay_every < 1) throw ConfigError("TrainConfig: decay_every must be >= 1");
    if (!(clip_norm > 0)) throw ConfigError("TrainConfig: clip_norm must be positive");
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

constexpr double kDbPerNeper = 10.0 / 2.302585092994046;  // 10 / ln 10

struct SiSdrParts {
    double c = 0, px = 0, alpha = 0, num = 0, den = 0;
};

SiSdrParts si_sdr_parts(std::span<const double> e, std::span<const double> x, double eps) {
    if (e.size() != x.size()) throw InputError("si_sdr: estimate and reference lengths differ");
    SiSdrParts p;
    for (std::size_t t = 0; t < x.size(); ++t) {
        p.c += e[t] * x[t];
        p.px += x[t] * x[t];
    }
    if (p.px == 0) throw InputError("si_sdr: reference is all zeros");
    p.alpha = p.c / p.px;
    for (std::size_t t = 0; t < x.size(); ++t) {
        const double target = p.alpha * x[t];
        const double noise = target - e[t];
        p.num += target * target;
        p.den += noise * noise;
    }
    p.den += eps;
    return p;
}

}  // namespace

double si_sdr(std::span<const double> estimate, std::span<const double> reference, double eps) {
    auto p = si_sdr_parts(estimate, reference, eps);
    return 10.0 * std::log10(p.num / p.den);
}

double sdr(std::span<const double> estimate, std::span<const double> reference) {
    if (estimate.size() != reference.size()) throw InputError("sdr: estimate and reference lengths differ");
    double s = 0, n = 0;
    for (std::size_t t = 0; t < reference.size(); ++t) {
        s += reference[t] * reference[t];
        const double d = reference[t] - estimate[t];
        n += d * d;
    }
    if (s == 0) throw InputError("sdr: reference is all zeros");
    return 10.0 * std::log10(s / std::max(n, 1e-300));
}

Tensor si_sdr_loss_term(const Tensor& estimate, const Tensor& reference, double eps) {
    if (estimate.shape() != reference.shape()) throw InputError("si_sdr: estimate and reference shapes differ");
    auto p = si_sdr_parts(estimate.data(), reference.data(), eps);
    const double value = 10.0 * std::log10(p.num / p.den);
    return Tensor::make_result({1}, {value}, "si_sdr", {estimate, reference},
                               [estimate, reference, p](std::span<const double> g) {
                                   auto e = estimate.data();
                                   auto x = reference.data();
                                   const double k = kDbPerNeper * g[0];
                                   // dv/de = k (2 c x / (px num) + 2 noise / den), noise = alpha x - e
                                   if (estimate.requires_grad()) {
                                       auto ge = estimate.impl()->grad_buffer();
                                       const double a = k * 2.0 * p.c / (p.px * p.num);
                                       const double b = k * 2.0 / p.den;
                                       for (std::size_t t = 0; t < x.size(); ++t)
                                           ge[t] += a * x[t] + b * (p.alpha * x[t] - e[t]);
                                   }
                                   // dv/dx = -2 k alpha noise (1/num + 1/den)
                                   if (reference.requires_grad()) {
                                       auto gx = reference.impl()->grad_buffer();
                                       const double a = -2.0 * k * p.alpha * (1.0 / p.num + 1.0 / p.den);
                                       for (std::size_t t = 0; t < x.size(); ++t)
                                           gx[t] += a * (p.alpha * x[t] - e[t]);
                                   }
                               });
}

Assignment best_assignment(const std::vector<std::vector<double>>& score) {
    const std::size_t S = score.size();
    if (S == 0) throw InputError("best_assignment: empty score matrix");
    for (const auto& row : score)
        if (row.size() != S) throw InputError("best_assignment: score matrix must be square");
    std::vector<std::size_t> perm(S);
    std::iota(perm.begin(), perm.end(), 0);
    Assignment best;
    bool first = true;
    do {
        double total = 0;
        for (std::size_t s = 0; s < S; ++s) total += score[perm[s]][s];
        const double m = total / static_cast<double>(S);
        if (first || m > best.mean_score) {
            best.estimate_for = perm;
            best.mean_score = m;
            first = false;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Tensor upit_loss(const std::vector<Tensor>& estimates, const std::vector<Tensor>& references) {
    const std::size_t S = references.size();
    if (S == 0 || estimates.size() != S) throw InputError("upit_loss: need the same non-zero number of estimates and references");
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j)
            if (estimates[i].numel() != references[j].numel()) throw InputError("upit_loss: length mismatch");
    std::vector<std::vector<double>> score(S, std::vector<double>(S));
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) score[i][j] = si_sdr(estimates[i].data(), references[j].data());
    auto best = best_assignment(score);
    Tensor total = si_sdr_loss_term(estimates[best.estimate_for[0]], references[0]);
    for (std::size_t s = 1; s < S; ++s) total = add(total, si_sdr_loss_term(estimates[best.estimate_for[s]], references[s]));
    return scale(total, -1.0 / static_cast<double>(S));
}

SeparationScore score_separation(const std::vector<std::vector<double>>& estimates,
                                 const std::vector<std::vector<double>>& references, std::span<const double> mixture) {
    const std::size_t S = references.size();
    if (estimates.size() != S)
        throw ConfigError("score_separation: " + std::to_string(estimates.size()) + " estimates for " +
                          std::to_string(S) + " references");
    std::vector<std::vector<double>> score(S, std::vector<double>(S));
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < S; ++j) score[i][j] = si_sdr(estimates[i], references[j]);
    auto best = best_assignment(score);
    SeparationScore out;
    out.assignment = best.estimate_for;
    for (std::size_t s = 0; s < S; ++s) {
        const auto& est = estimates[best.estimate_for[s]];
        const double v = score[best.estimate_for[s]][s];
        out.si_sdr += v;
        out.si_sdri += v - si_sdr(mixture, references[s]);
        out.sdri += sdr(est, references[s]) - sdr(mixture, references[s]);
    }
    const double inv = 1.0 / static_cast<double>(S);
    out.si_sdr *= inv;
    out.si_sdri *= inv;
    out.sdri *= inv;
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double lr, const AdamOptions& o) {
    if (!(lr > 0)) throw ConfigError("adam_step: lr must be positive");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), 0.0);
            state.v.emplace_back(p.tensor.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameter list");
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(o.beta1, t), c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor w = params[k].tensor;
        auto data = w.mutable_data();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != data.size()) throw ContractError("adam_step: moment shape differs for " + params[k].name);
        const bool has = w.has_grad();
        std::span<const double> g = has ? w.grad() : std::span<const double>{};
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = o.beta1 * m[i] + (1 - o.beta1) * gi;
            v[i] = o.beta2 * v[i] + (1 - o.beta2) * gi * gi;
            data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
        }
    }
}

double clip_grad_global_norm(const std::vector<NamedTensor>& params, double max_norm) {
    if (!(max_norm > 0)) throw ConfigError("clip_grad_global_norm: max_norm must be positive");
    double sq = 0;
    for (const auto& p : params)
        if (p.tensor.has_grad())
            for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double f = max_norm / norm;
        for (const auto& p : params) {
            Tensor t = p.tensor;
            if (!t.has_grad()) continue;
            for (double& g : t.mutable_grad()) g *= f;
        }
    }
    return norm;
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
    const std::size_t every = cfg.decay_every;
    if (epoch < cfg.phase_boundary) return cfg.lr0 * std::pow(cfg.decay_phase1, static_cast<double>(epoch / every));
    const double phase1 = std::pow(cfg.decay_phase1, static_cast<double>(cfg.phase_boundary / every));
    return cfg.lr0 * phase1 * std::pow(cfg.decay_phase2, static_cast<double>((epoch - cfg.phase_boundary) / every));
}

bool EarlyStopping::update(double score) {
    if (!best_ || score > *best_) {
        best_ = score;
        since_ = 0;
        improved_ = true;
    } else {
        ++since_;
        improved_ = false;
    }
    return since_ >= patience_;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

std::size_t crop_length(const Waveform& w, double max_seconds) {
    if (max_seconds <= 0) return w.size();
    const auto limit = static_cast<std::size_t>(std::llround(max_seconds * w.sample_rate));
    return std::min(w.size(), std::max<std::size_t>(limit, 1));
}

Tensor cropped(const Waveform& w, std::size_t n) {
    return Tensor::from({n}, std::vector<double>(w.samples.begin(), w.samples.begin() + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace

double train_step(DPRCNetModel& model, std::span<const MixtureSample* const> batch, TrainState& state, double lr,
                  double clip_norm) {
    if (batch.empty()) throw InputError("train_step: empty batch");
    auto params = model.parameters();
    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    ForwardContext ctx{Mode::train, &state.rng, std::nullopt};
    double total = 0;
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto* sample : batch) {
        if (sample->sources.size() != model.config.speakers)
            throw ConfigError("train_step: sample has " + std::to_string(sample->sources.size()) + " sources, model expects " +
                              std::to_string(model.config.speakers));
        const std::size_t n = sample->mixture.size();
        auto outs = separate(cropped(sample->mixture, n), model, ctx);
        std::vector<Tensor> refs;
        for (const auto& s : sample->sources) refs.push_back(cropped(s, n));
        Tensor loss = upit_loss(outs, refs);
        if (!std::isfinite(loss.item())) throw NumericError("train_step: non-finite loss");
        total += loss.item();
        scale(loss, w).backward();
    }
    clip_grad_global_norm(params, clip_norm);
    adam_step(params, state.adam, lr);
    return total * w;
}

double validation_score(const DPRCNetModel& model, const std::vector<MixtureSample>& data, double max_seconds) {
    if (data.empty()) throw InputError("validation_score: empty dataset");
    NoGradGuard no_grad;
    double acc = 0;
    for (const auto& s : data) {
        const std::size_t n = crop_length(s.mixture, max_seconds);
        auto outs = separate(cropped(s.mixture, n), model, ForwardContext{});
        std::vector<std::vector<double>> est, ref;
        for (const auto& o : outs) est.emplace_back(o.data().begin(), o.data().end());
        for (const auto& r : s.sources) ref.emplace_back(r.samples.begin(), r.samples.begin() + static_cast<std::ptrdiff_t>(n));
        std::span<const double> mix(s.mixture.samples.data(), n);
        acc += score_separation(est, ref, mix).si_sdri;
    }
    return acc / static_cast<double>(data.size());
}

std::string format_epoch(const EpochRecord& r) {
    std::ostringstream os;
    os << r.epoch << '\t' << std::setprecision(8) << r.train_loss << '\t' << r.valid_sisdri << '\t' << r.lr;
    return os.str();
}

TrainResult train(DPRCNetModel& model, const std::vector<MixtureSample>& train_set,
                  const std::vector<MixtureSample>& valid_set, const TrainConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    if (train_set.empty() || valid_set.empty()) throw InputError("train: datasets must be non-empty");

    // Crop once so every epoch sees identical inputs.
    std::vector<MixtureSample> train_data;
    for (const auto& s : train_set) {
        MixtureSample c = s;
        const std::size_t n = crop_length(s.mixture, cfg.utterance_seconds);
        c.mixture.samples.resize(n);
        for (auto& src : c.sources) src.samples.resize(n);
        train_data.push_back(std::move(c));
    }

    std::ofstream log;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        log.open(*options.out_dir / "train.log");
        if (!log) throw IoError("train: cannot open " + (*options.out_dir / "train.log").string());
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        log << "# dprcnet training log, started " << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << '\n';
        log << "# epoch\ttrain_loss\tvalid_sisdri\tlr\n";
    }

    TrainState state;
    state.rng.seed(cfg.seed);
    EarlyStopping stopper(cfg.patience);
    TrainResult result;
    std::vector<std::vector<double>> best_params;
    auto params = model.parameters();

    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const double lr = lr_at_epoch(e, cfg);
        std::shuffle(order.begin(), order.end(), state.rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::vector<const MixtureSample*> batch;
            for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(&train_data[order[k]]);
            double loss;
            try {
                loss = train_step(model, batch, state, lr, cfg.clip_norm);
            } catch (const NumericError& err) {
                throw NumericError("train: epoch " + std::to_string(e + 1) + ", batch " + std::to_string(batches + 1) +
                                   ": " + err.what());
            }
            loss_sum += loss;
            ++batches;
        }
        EpochRecord rec{e + 1, loss_sum / static_cast<double>(batches), validation_score(model, valid_set, cfg.utterance_seconds),
                        lr};
        result.history.push_back(rec);
        state.epoch = e + 1;
        const bool stop = stopper.update(rec.valid_sisdri);
        state.best_validation = stopper.best();
        state.epochs_since_improvement = stopper.epochs_since_improvement();
        if (stopper.improved()) {
            result.best_epoch = rec.epoch;
            result.best_score = rec.valid_sisdri;
            best_params.clear();
            for (const auto& p : params) best_params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
            if (options.out_dir)
                save_checkpoint(*options.out_dir / "best.ckpt", model,
                                {static_cast<std::int64_t>(rec.epoch), rec.valid_sisdri});
        }
        if (log) log << format_epoch(rec) << '\n' << std::flush;
        if (options.on_epoch) options.on_epoch(rec);
        if (stop || (options.stop_when && options.stop_when(rec))) {
            result.stopped_early = true;
            break;
        }
    }
    for (std::size_t k = 0; k < params.size() && !best_params.empty(); ++k) {
        Tensor t = params[k].tensor;
        std::copy(best_params[k].begin(), best_params[k].end(), t.mutable_data().begin());
    }
    model.zero_grad();
    return result;
}

}  // namespace dprc

// SPDX-License-Identifier: Apache-2.0
//
// SI-SDR objective under utterance-level permutation-invariant training,
// Adam, global-norm clipping, the two-phase step-decay schedule and early
// stopping on validation SI-SDRi.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "dprcnet/data.hpp"
#include "dprcnet/separator.hpp"

namespace dprc {

struct TrainConfig {
    double utterance_seconds = 4.0;  // longer inputs are cropped
    std::size_t epochs = 150;
    double lr0 = 1e-3;
    double decay_phase1 = 0.98;  // per `decay_every` epochs before phase_boundary
    double decay_phase2 = 0.9;   // per `decay_every` epochs from phase_boundary on
    std::size_t phase_boundary = 100;
    std::size_t decay_every = 2;
    double clip_norm = 5.0;
    std::size_t patience = 10;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

// ---- metrics (plain doubles) ----------------------------------------------

inline constexpr double kSiSdrEps = 1e-8;

// alpha = <e, x> / |x|^2;  10 log10(|alpha x|^2 / (|alpha x - e|^2 + eps))
double si_sdr(std::span<const double> estimate, std::span<const double> reference, double eps = kSiSdrEps);
// 10 log10(|x|^2 / |x - e|^2), scale dependent.
double sdr(std::span<const double> estimate, std::span<const double> reference);

// Differentiable SI-SDR of two [T] tensors; returns a [1] tensor in dB.
Tensor si_sdr_loss_term(const Tensor& estimate, const Tensor& reference, double eps = kSiSdrEps);

struct Assignment {
    std::vector<std::size_t> estimate_for;  // estimate_for[s] = index of the estimate assigned to reference s
    double mean_score = 0.0;
};

// score[i][j] = metric(estimate i, reference j); maximizes the mean over all S! assignments.
Assignment best_assignment(const std::vector<std::vector<double>>& score);

// -(best mean SI-SDR) with gradients through the selected pairs.
Tensor upit_loss(const std::vector<Tensor>& estimates, const std::vector<Tensor>& references);

struct SeparationScore {
    double si_sdri = 0.0;  // mean over speakers, best permutation by SI-SDR
    double sdri = 0.0;
    double si_sdr = 0.0;
    std::vector<std::size_t> assignment;
};

SeparationScore score_separation(const std::vector<std::vector<double>>& estimates,
                                 const std::vector<std::vector<double>>& references,
                                 std::span<const double> mixture);

// ---- optimization ----------------------------------------------------------

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

// One bias-corrected Adam update from the params' accumulated grads (absent
// grads count as zero). Throws NumericError naming the first non-finite grad.
void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double lr, const AdamOptions& options = {});

// Rescales all grads by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_grad_global_norm(const std::vector<NamedTensor>& params, double max_norm);

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
    // Records one epoch's validation score; true when training should stop.
    bool update(double score);
    bool improved() const { return improved_; }
    std::optional<double> best() const { return best_; }
    std::size_t epochs_since_improvement() const { return since_; }

private:
    std::size_t patience_;
    std::optional<double> best_;
    std::size_t since_ = 0;
    bool improved_ = false;
};

// ---- loop ------------------------------------------------------------------

struct TrainState {
    AdamState adam;
    std::size_t epoch = 0;
    std::optional<double> best_validation;
    std::size_t epochs_since_improvement = 0;
    Rng rng;
};

// Forward + backward over a batch (gradients averaged), clip, Adam.
// Returns the mean batch loss before the update.
double train_step(DPRCNetModel& model, std::span<const MixtureSample* const> batch, TrainState& state, double lr,
                  double clip_norm);

// Eval-mode mean SI-SDRi of the model on a dataset.
double validation_score(const DPRCNetModel& model, const std::vector<MixtureSample>& data,
                        double max_seconds = 0.0);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double valid_sisdri = 0.0;
    double lr = 0.0;
};

struct TrainOptions {
    // When set: best.ckpt is rewritten on every improvement and train.log holds the history.
    std::optional<std::filesystem::path> out_dir;
    std::function<void(const EpochRecord&)> on_epoch;
    // Ends training after any epoch for which this returns true.
    std::function<bool(const EpochRecord&)> stop_when;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_score = 0.0;
    bool stopped_early = false;
};

// Runs the full recipe and leaves the best-validation parameters in `model`.
TrainResult train(DPRCNetModel& model, const std::vector<MixtureSample>& train_set,
                  const std::vector<MixtureSample>& valid_set, const TrainConfig& cfg, const TrainOptions& options = {});

// One history line: epoch, train_loss, valid_sisdri, lr (tab separated).
std::string format_epoch(const EpochRecord& r);

}  // namespace dprc

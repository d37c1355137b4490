// SPDX-License-Identifier: Apache-2.0
//
// dprcnet: data generation, training, separation, evaluation and
// complexity analysis from the command line.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dprcnet/analysis.hpp"
#include "dprcnet/checkpoint.hpp"
#include "dprcnet/config.hpp"
#include "dprcnet/data.hpp"
#include "dprcnet/errors.hpp"
#include "dprcnet/separator.hpp"
#include "dprcnet/training.hpp"

namespace fs = std::filesystem;
using namespace dprc;

namespace {

int run_gen_data(std::size_t num, double seconds, const fs::path& out, std::uint64_t seed) {
    if (num < 1) throw InputError("gen-data: --num must be >= 1");
    auto m = build_dataset(num, seconds, out, seed);
    std::cout << "wrote " << m.entries.size() << " mixtures to " << (out / "manifest.tsv").string() << '\n';
    return 0;
}

int run_train(const fs::path& config, const fs::path& train_manifest, const fs::path& valid_manifest, const fs::path& out) {
    const RunConfig cfg = load_run_config(config);
    const Manifest tm = read_manifest(train_manifest);
    const Manifest vm = read_manifest(valid_manifest);
    for (const auto* m : {&tm, &vm})
        if (m->sample_rate != cfg.data.sample_rate)
            throw ConfigError("train: manifest sample rate " + std::to_string(m->sample_rate) +
                              " differs from data.sample_rate " + std::to_string(cfg.data.sample_rate));
    const auto train_set = load_samples(tm);
    const auto valid_set = load_samples(vm);

    fs::create_directories(out);
    {
        std::ofstream f(out / "config.cfg");
        f << run_config_to_text(cfg);
        if (!f) throw IoError("cannot write " + (out / "config.cfg").string());
    }
    DPRCNetModel model = DPRCNetModel::init(cfg.model, cfg.train.seed);
    TrainOptions opts;
    opts.out_dir = out;
    opts.on_epoch = [](const EpochRecord& r) { std::cout << format_epoch(r) << std::endl; };
    std::cout << "# epoch\ttrain_loss\tvalid_sisdri\tlr\n";
    const auto result = train(model, train_set, valid_set, cfg.train, opts);
    save_checkpoint(out / "final.ckpt", model,
                    {static_cast<std::int64_t>(result.best_epoch), result.best_score});
    std::cout << "best epoch " << result.best_epoch << ", validation SI-SDRi " << result.best_score << " dB"
              << (result.stopped_early ? " (stopped early)" : "") << '\n';
    return 0;
}

int run_separate(const fs::path& ckpt, const fs::path& input, const fs::path& out) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const Waveform y = wav_read(input);
    auto outs = separate(y, ck.model);
    double peak_in = 0;
    for (double v : y.samples) peak_in = std::max(peak_in, std::abs(v));
    fs::create_directories(out);
    const std::string stem = input.stem().string();
    for (std::size_t s = 0; s < outs.size(); ++s) {
        // SI-SDR training leaves the output scale free; match the mixture's peak.
        double peak = 0;
        for (double v : outs[s].samples) peak = std::max(peak, std::abs(v));
        if (peak > 0 && peak_in > 0)
            for (double& v : outs[s].samples) v *= peak_in / peak;
        const fs::path path = out / (stem + "_s" + std::to_string(s + 1) + ".wav");
        const auto clipped = wav_write(outs[s], path);
        if (clipped) std::cerr << "warning: " << clipped << " samples clipped in " << path.string() << '\n';
        std::cout << path.string() << '\n';
    }
    return 0;
}

int run_evaluate(const fs::path& ckpt, const fs::path& manifest) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const auto report = evaluate_manifest(ck.model, read_manifest(manifest));
    print_evaluation(std::cout, report);
    return 0;
}

int run_analyze(const std::optional<fs::path>& config, double seconds, int sample_rate, bool kv) {
    const ModelConfig cfg = config ? load_run_config(*config).model : ModelConfig::paper();
    const auto report = estimate_macs(cfg, seconds, sample_rate);
    if (kv)
        print_report_kv(std::cout, report);
    else
        print_report(std::cout, report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DP-RCNet time-domain speech separation", "dprcnet"};
    app.require_subcommand(1);

    std::size_t num = 0;
    double seconds = 1.0;
    fs::path out;
    std::uint64_t seed = 0;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic two-source corpus with a manifest");
    gen->add_option("--num", num, "Number of mixtures")->required();
    gen->add_option("--seconds", seconds, "Duration of each mixture in seconds")->required();
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--seed", seed, "Corpus seed");

    fs::path config, train_manifest, valid_manifest;
    auto* tr = app.add_subcommand("train", "Train a model; writes best.ckpt, final.ckpt and train.log");
    tr->add_option("--config", config, "Run configuration file")->required()->check(CLI::ExistingFile);
    tr->add_option("--train-manifest", train_manifest, "Training manifest")->required()->check(CLI::ExistingFile);
    tr->add_option("--valid-manifest", valid_manifest, "Validation manifest")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", out, "Output directory")->required();

    fs::path model, input, manifest;
    auto* sep = app.add_subcommand("separate", "Separate a mixture WAV into <stem>_s<i>.wav files");
    sep->add_option("--model", model, "Checkpoint")->required()->check(CLI::ExistingFile);
    sep->add_option("--input", input, "Mixture WAV")->required()->check(CLI::ExistingFile);
    sep->add_option("--out", out, "Output directory")->required();

    auto* ev = app.add_subcommand("evaluate", "Report SI-SDRi and SDRi over a manifest");
    ev->add_option("--model", model, "Checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--manifest", manifest, "Manifest")->required()->check(CLI::ExistingFile);

    std::optional<fs::path> analyze_config;
    double analyze_seconds = 4.0;
    int sample_rate = 8000;
    bool kv = false;
    auto* an = app.add_subcommand("analyze", "Parameter and MAC counts (published configuration by default)");
    an->add_option("--config", analyze_config, "Run configuration file")->check(CLI::ExistingFile);
    an->add_option("--seconds", analyze_seconds, "Input duration in seconds");
    an->add_option("--sample-rate", sample_rate, "Sample rate in Hz");
    an->add_flag("--kv", kv, "Print key=value lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "dprcnet: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*gen) return run_gen_data(num, seconds, out, seed);
        if (*tr) return run_train(config, train_manifest, valid_manifest, out);
        if (*sep) return run_separate(model, input, out);
        if (*ev) return run_evaluate(model, manifest);
        if (*an) return run_analyze(analyze_config, analyze_seconds, sample_rate, kv);
    } catch (const std::exception& e) {
        std::cerr << "dprcnet: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

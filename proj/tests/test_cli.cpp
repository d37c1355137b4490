// SPDX-License-Identifier: Apache-2.0
//
// Drives the built dprcnet binary as a subprocess.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dprcnet/analysis.hpp"
#include "dprcnet/data.hpp"

using namespace dprc;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
    const std::string cmd = std::string(DPRC_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string without_first_line(const std::string& s) { return s.substr(s.find('\n') + 1); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("dprc_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const char* kTinyConfig =
    "model.L = 8\nmodel.N = 8\nmodel.B = 4\nmodel.I = 8\nmodel.D = 4,4\nmodel.blocks = 1,1\nmodel.hidden = 4\n"
    "model.layerscale_init = 0.1\ntrain.epochs = 2\ntrain.batch_size = 2\ntrain.seed = 3\n"
    "train.utterance_seconds = 0.1\ndata.duration_s = 0.1\n";

}  // namespace

TEST_CASE("usage errors exit with 2") {
    auto r = run("frobnicate");
    CHECK(r.code == 2);
    CHECK(r.out.find("Usage") != std::string::npos);
    CHECK(run("").code == 2);
    CHECK(run("analyze --bogus").code == 2);
    CHECK(run("gen-data --num 2").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("analyze reports the published figures") {
    auto r = run("analyze --config " + q(fs::path(DPRC_SOURCE_DIR) / "configs" / "paper.cfg") + " --seconds 4 --kv");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("total_params=9142832\n") != std::string::npos);
    CHECK(r.out.find("total_macs=" + std::to_string(estimate_macs(ModelConfig::paper(), 4.0).total_macs)) != std::string::npos);
    auto text = run("analyze");
    CHECK(text.code == 0);
    CHECK(text.out.find("params (M): 9.143") != std::string::npos);
    CHECK(run("analyze --seconds 0").code == 1);
}

TEST_CASE("gen-data, train, separate and evaluate end to end") {
    const auto dir = scratch("pipeline");
    std::ofstream(dir / "tiny.cfg") << kTinyConfig;

    REQUIRE(run("gen-data --num 4 --seconds 0.1 --seed 1 --out " + q(dir / "train")).code == 0);
    REQUIRE(run("gen-data --num 2 --seconds 0.1 --seed 2 --out " + q(dir / "valid")).code == 0);
    CHECK(read_manifest(dir / "train" / "manifest.tsv").entries.size() == 4);

    const std::string train_args = "train --config " + q(dir / "tiny.cfg") + " --train-manifest " +
                                   q(dir / "train" / "manifest.tsv") + " --valid-manifest " +
                                   q(dir / "valid" / "manifest.tsv") + " --out ";
    auto t1 = run(train_args + q(dir / "run1"));
    auto t2 = run(train_args + q(dir / "run2"));
    INFO(t1.out);
    REQUIRE(t1.code == 0);
    REQUIRE(t2.code == 0);
    for (const char* f : {"best.ckpt", "final.ckpt", "config.cfg"})
        CHECK(slurp(dir / "run1" / f) == slurp(dir / "run2" / f));
    CHECK(without_first_line(slurp(dir / "run1" / "train.log")) == without_first_line(slurp(dir / "run2" / "train.log")));
    CHECK(t1.out == t2.out);

    // A one-second mixture gives two 8000-sample outputs named after the input.
    wav_write(synth_dataset(1, 1.0, 9)[0].mixture, dir / "mixture.wav");
    for (const char* out : {"sep1", "sep2"})
        REQUIRE(run("separate --model " + q(dir / "run1" / "best.ckpt") + " --input " + q(dir / "mixture.wav") + " --out " +
                    q(dir / out))
                    .code == 0);
    for (const char* f : {"mixture_s1.wav", "mixture_s2.wav"}) {
        auto w = wav_read(dir / "sep1" / f);
        CHECK(w.size() == 8000);
        CHECK(w.sample_rate == 8000);
        CHECK(slurp(dir / "sep1" / f) == slurp(dir / "sep2" / f));
    }
    CHECK_FALSE(fs::exists(dir / "sep1" / "mixture_s3.wav"));

    auto e1 = run("evaluate --model " + q(dir / "run1" / "best.ckpt") + " --manifest " + q(dir / "valid" / "manifest.tsv"));
    auto e2 = run("evaluate --model " + q(dir / "run1" / "best.ckpt") + " --manifest " + q(dir / "valid" / "manifest.tsv"));
    REQUIRE(e1.code == 0);
    CHECK(e1.out == e2.out);
    CHECK(e1.out.rfind("# dprcnet evaluation", 0) == 0);
    CHECK(e1.out.find("\nmean\t-\t") != std::string::npos);

    // Runtime failures exit with 1 and say why.
    std::ofstream(dir / "broken.ckpt") << "not a checkpoint";
    auto bad = run("evaluate --model " + q(dir / "broken.ckpt") + " --manifest " + q(dir / "valid" / "manifest.tsv"));
    CHECK(bad.code == 1);
    CHECK(bad.out.find("bad magic") != std::string::npos);
    std::ofstream(dir / "typo.cfg") << "model.Q = 1\n";
    auto typo = run("train --config " + q(dir / "typo.cfg") + " --train-manifest " + q(dir / "train" / "manifest.tsv") +
                    " --valid-manifest " + q(dir / "valid" / "manifest.tsv") + " --out " + q(dir / "run3"));
    CHECK(typo.code == 1);
    CHECK(typo.out.find("model.Q") != std::string::npos);
    fs::remove_all(dir);
}

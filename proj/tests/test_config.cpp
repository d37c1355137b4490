// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dprcnet/checkpoint.hpp"
#include "dprcnet/config.hpp"
#include "dprcnet/errors.hpp"
#include "test_util.hpp"

using namespace dprc;
namespace fs = std::filesystem;

namespace {

fs::path configs() { return fs::path(DPRC_SOURCE_DIR) / "configs"; }

std::string error_of(std::string_view text) {
    try {
        parse_run_config(text, "t.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("shipped configs") {
    auto paper = load_run_config(configs() / "paper.cfg");
    CHECK(paper.model == ModelConfig::paper());
    auto toy = load_run_config(configs() / "toy.cfg");
    CHECK(toy.model.frame_length == 16);
    CHECK(toy.model.stride == 8);
    CHECK(toy.model.features == 64);
    CHECK(toy.model.bottleneck == 16);
    CHECK(toy.model.chunk == 16);
    CHECK(toy.model.hop == 8);
    CHECK(toy.model.stage_dims == std::vector<std::size_t>{4, 8, 16, 32});
    CHECK(toy.model.stage_blocks == std::vector<std::size_t>{1, 1, 2, 1});
    CHECK(toy.model.hidden == 16);
    CHECK(toy.train.clip_norm == 5.0);
    CHECK(toy.data.duration_s == 1.0);
    CHECK_THROWS_AS(load_run_config(configs() / "absent.cfg"), IoError);
}

TEST_CASE("parse defaults and derived keys") {
    auto empty = parse_run_config("");
    CHECK(empty.model == ModelConfig::paper());
    CHECK(empty.train.epochs == 30);
    CHECK(empty.data.sample_rate == 8000);

    auto c = parse_run_config("# comment\nmodel.L = 20\n  model.I=10  \nmodel.D = 3, 6\nmodel.blocks=1,2\n");
    CHECK(c.model.stride == 10);
    CHECK(c.model.hop == 5);
    CHECK(c.model.stage_dims == std::vector<std::size_t>{3, 6});

    auto explicit_hop = parse_run_config("model.I = 10\nmodel.H = 3\nmodel.stride = 2\n");
    CHECK(explicit_hop.model.hop == 3);
    CHECK(explicit_hop.model.stride == 2);
}

TEST_CASE("parse errors carry origin and line") {
    CHECK(error_of("model.N = 4\nmodel.Q = 1\n").find("t.cfg:2") != std::string::npos);
    CHECK(error_of("model.Q = 1\n").find("unknown key") != std::string::npos);
    CHECK(error_of("model.N = 4\nmodel.N = 5\n").find("duplicate") != std::string::npos);
    CHECK(error_of("model.N = -4\n").find("t.cfg:1") != std::string::npos);
    CHECK(error_of("model.N = 4x\n") != "");
    CHECK(error_of("model.N\n").find("key = value") != std::string::npos);
    CHECK(error_of("model.N =\n").find("missing value") != std::string::npos);
    CHECK(error_of("model.D = 4,,8\n") != "");
    CHECK(error_of("model.D = 4,8\n") != "");  // blocks still has four entries
    CHECK(error_of("train.lr0 = 0\n") != "");
    CHECK(error_of("data.duration_s = 0\n") != "");
}

TEST_CASE("canonical text round trips") {
    RunConfig c = parse_run_config("model.N = 12\nmodel.D = 2,3\nmodel.blocks = 1,1\nmodel.layerscale_init = 0.1\n"
                                   "train.lr0 = 0.0003\ntrain.seed = 9\ndata.duration_s = 0.3\n");
    auto back = parse_run_config(run_config_to_text(c));
    CHECK(back.model == c.model);
    CHECK(back.train.lr0 == c.train.lr0);
    CHECK(back.train.seed == 9);
    CHECK(back.data.duration_s == 0.3);
    CHECK(parse_run_config(model_config_to_text(c.model)).model == c.model);

    CHECK(config_hash(c.model) == config_hash(back.model));
    auto other = c.model;
    other.hidden += 1;
    CHECK(config_hash(other) != config_hash(c.model));
}

TEST_CASE("checkpoint round trip is bit exact") {
    const auto dir = fs::temp_directory_path() / "dprc_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ModelConfig cfg;
    cfg.features = 12;
    cfg.bottleneck = 6;
    cfg.chunk = 8;
    cfg.hop = 4;
    cfg.stage_dims = {3, 5};
    cfg.stage_blocks = {1, 2};
    cfg.hidden = 3;
    cfg.layerscale_init = 0.125;
    auto model = DPRCNetModel::init(cfg, 7);
    // Perturb gamma so loaded values cannot come from a fresh init.
    Tensor g = model.stages[1].blocks[1].inter.gamma;
    g.mutable_data()[0] = -1.0 / 3.0;

    save_checkpoint(dir / "m.ckpt", model, {12, 4.25});
    CHECK_FALSE(fs::exists(dir / "m.ckpt.tmp"));
    auto ck = load_checkpoint(dir / "m.ckpt");
    CHECK(ck.model.config == cfg);
    CHECK(ck.meta.epoch == 12);
    CHECK(ck.meta.best_score == 4.25);
    auto a = model.parameters(), b = ck.model.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].name == b[k].name);
        CHECK(a[k].tensor.shape() == b[k].tensor.shape());
        CHECK(std::memcmp(a[k].tensor.data().data(), b[k].tensor.data().data(), a[k].tensor.numel() * sizeof(double)) == 0);
    }
    save_checkpoint(dir / "again.ckpt", ck.model, ck.meta);
    CHECK(slurp(dir / "m.ckpt") == slurp(dir / "again.ckpt"));

    // Identical outputs from the reloaded model.
    auto y = Tensor::uniform({300}, -1, 1, 8);
    auto o1 = separate(y, model), o2 = separate(y, ck.model);
    CHECK(test::values(o1[0]) == test::values(o2[0]));

    auto bytes = slurp(dir / "m.ckpt");
    auto bad = bytes;
    bad[0] = 'X';
    spit(dir / "magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
    bad = bytes;
    bad[8] = 9;
    spit(dir / "version.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), FormatError);
    bad = bytes;
    bad.resize(bytes.size() - 20);
    spit(dir / "short.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
    fs::remove_all(dir);
}

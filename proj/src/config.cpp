// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "dprcnet/errors.hpp"

namespace dprc {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Location {
    std::string_view origin;
    std::size_t line;
    std::string_view key;

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line) + ": " + std::string(key) + ": " + what);
    }
};

std::size_t parse_size(std::string_view v, const Location& at) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) at.fail("expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

std::uint64_t parse_u64(std::string_view v, const Location& at) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) at.fail("expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

double parse_double(std::string_view v, const Location& at) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) at.fail("expected a number, got '" + std::string(v) + "'");
    return out;
}

std::vector<std::size_t> parse_list(std::string_view v, const Location& at) {
    std::vector<std::size_t> out;
    while (true) {
        const auto comma = v.find(',');
        out.push_back(parse_size(trim(v.substr(0, comma)), at));
        if (comma == std::string_view::npos) break;
        v = v.substr(comma + 1);
    }
    return out;
}

template <class T>
std::string list_text(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string num_text(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

RunConfig parse_run_config(std::string_view text, std::string_view origin) {
    RunConfig cfg;
    // Desk-scale training defaults; the model keys default to the published model.
    cfg.train.epochs = 30;
    bool stride_set = false, hop_set = false;
    std::map<std::string, std::size_t, std::less<>> seen;

    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const Location at{origin, line_no, key};
        if (value.empty()) at.fail("missing value");
        if (auto it = seen.find(key); it != seen.end()) at.fail("duplicate key (first set on line " + std::to_string(it->second) + ")");
        seen.emplace(std::string(key), line_no);

        auto& m = cfg.model;
        auto& t = cfg.train;
        if (key == "model.L") m.frame_length = parse_size(value, at);
        else if (key == "model.stride") m.stride = parse_size(value, at), stride_set = true;
        else if (key == "model.N") m.features = parse_size(value, at);
        else if (key == "model.B") m.bottleneck = parse_size(value, at);
        else if (key == "model.I") m.chunk = parse_size(value, at);
        else if (key == "model.H") m.hop = parse_size(value, at), hop_set = true;
        else if (key == "model.D") m.stage_dims = parse_list(value, at);
        else if (key == "model.blocks") m.stage_blocks = parse_list(value, at);
        else if (key == "model.hidden") m.hidden = parse_size(value, at);
        else if (key == "model.S") m.speakers = parse_size(value, at);
        else if (key == "model.layerscale_init") m.layerscale_init = parse_double(value, at);
        else if (key == "model.droppath_max") m.droppath_max = parse_double(value, at);
        else if (key == "train.epochs") t.epochs = parse_size(value, at);
        else if (key == "train.lr0") t.lr0 = parse_double(value, at);
        else if (key == "train.batch_size") t.batch_size = parse_size(value, at);
        else if (key == "train.patience") t.patience = parse_size(value, at);
        else if (key == "train.seed") t.seed = parse_u64(value, at);
        else if (key == "train.clip_norm") t.clip_norm = parse_double(value, at);
        else if (key == "train.utterance_seconds") t.utterance_seconds = parse_double(value, at);
        else if (key == "data.sample_rate") cfg.data.sample_rate = static_cast<int>(parse_size(value, at));
        else if (key == "data.duration_s") cfg.data.duration_s = parse_double(value, at);
        else throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    }
    if (!stride_set) cfg.model.stride = std::max<std::size_t>(cfg.model.frame_length / 2, 1);
    if (!hop_set) cfg.model.hop = std::max<std::size_t>(cfg.model.chunk / 2, 1);
    cfg.model.validate();
    cfg.train.validate();
    if (cfg.data.sample_rate <= 0) throw ConfigError(std::string(origin) + ": data.sample_rate must be positive");
    if (!(cfg.data.duration_s > 0)) throw ConfigError(std::string(origin) + ": data.duration_s must be positive");
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

std::string model_config_to_text(const ModelConfig& m) {
    std::ostringstream os;
    os << "model.L = " << m.frame_length << '\n'
       << "model.stride = " << m.stride << '\n'
       << "model.N = " << m.features << '\n'
       << "model.B = " << m.bottleneck << '\n'
       << "model.I = " << m.chunk << '\n'
       << "model.H = " << m.hop << '\n'
       << "model.D = " << list_text(m.stage_dims) << '\n'
       << "model.blocks = " << list_text(m.stage_blocks) << '\n'
       << "model.hidden = " << m.hidden << '\n'
       << "model.S = " << m.speakers << '\n'
       << "model.layerscale_init = " << num_text(m.layerscale_init) << '\n'
       << "model.droppath_max = " << num_text(m.droppath_max) << '\n';
    return os.str();
}

std::string run_config_to_text(const RunConfig& c) {
    std::ostringstream os;
    os << model_config_to_text(c.model)
       << "train.epochs = " << c.train.epochs << '\n'
       << "train.lr0 = " << num_text(c.train.lr0) << '\n'
       << "train.batch_size = " << c.train.batch_size << '\n'
       << "train.patience = " << c.train.patience << '\n'
       << "train.seed = " << c.train.seed << '\n'
       << "train.clip_norm = " << num_text(c.train.clip_norm) << '\n'
       << "train.utterance_seconds = " << num_text(c.train.utterance_seconds) << '\n'
       << "data.sample_rate = " << c.data.sample_rate << '\n'
       << "data.duration_s = " << num_text(c.data.duration_s) << '\n';
    return os.str();
}

std::uint64_t config_hash(const ModelConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : model_config_to_text(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace dprc

// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dprcnet/config.hpp"
#include "dprcnet/errors.hpp"

namespace dprc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'P', 'R', 'C', 'N', 'E', 'T', 'C'};

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    template <class T>
    T get(const char* what) {
        T v{};
        bytes(reinterpret_cast<char*>(&v), sizeof(T), what);
        return v;
    }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw FormatError(path_.string() + ": truncated checkpoint while reading " + what);
    }

private:
    std::ifstream& in_;
    const std::filesystem::path& path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DPRCNetModel& model, const CheckpointMeta& meta) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        put(out, kCheckpointVersion);
        const std::string text = model_config_to_text(model.config);
        put(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        const auto params = model.parameters();
        put(out, static_cast<std::uint64_t>(params.size()));
        for (const auto& p : params) {
            put(out, static_cast<std::uint32_t>(p.name.size()));
            out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
            put(out, static_cast<std::uint32_t>(p.tensor.rank()));
            for (auto d : p.tensor.shape()) put(out, static_cast<std::uint64_t>(d));
            const auto data = p.tensor.data();
            out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
        }
        put(out, meta.epoch);
        put(out, meta.best_score);
        if (!out.flush()) throw IoError("failed writing checkpoint " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    Reader r(in, path);
    char magic[8];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + ": not a dprcnet checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto text_len = r.get<std::uint32_t>("config length");
    if (text_len > (1u << 20)) throw FormatError(path.string() + ": implausible config length");
    std::string text(text_len, '\0');
    r.bytes(text.data(), text.size(), "config");
    const ModelConfig cfg = parse_run_config(text, path.string()).model;

    // The model is rebuilt from its config, then every tensor is overwritten by name.
    Checkpoint ck{DPRCNetModel::init(cfg, 0), {}};
    std::map<std::string, Tensor> by_name;
    for (const auto& p : ck.model.parameters()) by_name.emplace(p.name, p.tensor);

    const auto count = r.get<std::uint64_t>("tensor count");
    if (count != by_name.size())
        throw FormatError(path.string() + ": holds " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(by_name.size()));
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = r.get<std::uint32_t>("name length");
        if (name_len > 4096) throw FormatError(path.string() + ": implausible tensor name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name.size(), "tensor name");
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError(path.string() + ": unexpected tensor '" + name + "'");
        const auto rank = r.get<std::uint32_t>("rank");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
        if (shape != it->second.shape())
            throw FormatError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(it->second.shape()));
        auto dst = it->second.mutable_data();
        r.bytes(reinterpret_cast<char*>(dst.data()), dst.size_bytes(), "tensor values");
        by_name.erase(it);
    }
    if (!by_name.empty()) throw FormatError(path.string() + ": missing tensor '" + by_name.begin()->first + "'");
    ck.meta.epoch = r.get<std::int64_t>("epoch");
    ck.meta.best_score = r.get<double>("best score");
    return ck;
}

}  // namespace dprc

#pragma once

#include <cstring>
#include <fstream>

#include "qdbnn/config.hpp"

namespace qdbnn {

inline constexpr char kCheckpointMagic[] = "QDBNNCKP1\n";

// Checkpoint container: magic, little-endian u32 header length, JSON header
// (model spec, step, seed, sizes, resolved run config), then the raw
// float64 blocks for parameters and both Adam moments.  Round-trips are
// bit-exact.
inline void save_checkpoint(const fs::path& path, const TrainState& state, const json& run_config) {
    json header;
    header["version"] = 1;
    header["spec"] = model_spec_to_json(state.spec);
    header["step"] = state.step;
    header["seed"] = state.seed;
    header["n_params"] = state.n_params();
    header["config"] = run_config;
    const std::string htext = header.dump();
    Eigen::VectorXd params;
    gather_params(state, &params);
    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic) - 1);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(hlen >> (8 * i)));
    bytes.insert(bytes.end(), htext.begin(), htext.end());
    auto append_doubles = [&bytes](const Eigen::VectorXd& v) {
        const auto* raw = reinterpret_cast<const std::uint8_t*>(v.data());
        bytes.insert(bytes.end(), raw, raw + sizeof(double) * v.size());
    };
    append_doubles(params);
    append_doubles(state.adam_m);
    append_doubles(state.adam_v);
    write_file_atomic(path, bytes);
}

struct LoadedCheckpoint {
    TrainState state;
    json run_config;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
    if (bytes.size() < magic_len + 4 ||
        std::memcmp(bytes.data(), kCheckpointMagic, magic_len) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i) hlen |= std::uint32_t(bytes[magic_len + i]) << (8 * i);
    const std::size_t hstart = magic_len + 4;
    if (bytes.size() < hstart + hlen) throw DataError("truncated checkpoint header: " + path.string());
    const json header = json::parse(bytes.begin() + hstart, bytes.begin() + hstart + hlen);
    LoadedCheckpoint out;
    out.state.spec = model_spec_from_json(header.at("spec"));
    out.state.step = header.at("step").get<long>();
    out.state.seed = header.at("seed").get<std::uint64_t>();
    out.run_config = header.value("config", json::object());
    for (const auto& lspec : out.state.spec.layers) out.state.layers.push_back(LayerParams::make(lspec));
    const int n = header.at("n_params").get<int>();
    QDBNN_REQUIRE(n == out.state.n_params(), "checkpoint parameter count mismatch");
    const std::size_t blob = hstart + hlen;
    if (bytes.size() < blob + 3 * sizeof(double) * std::size_t(n)) {
        throw DataError("truncated checkpoint payload: " + path.string());
    }
    auto read_doubles = [&bytes](std::size_t offset, int count) {
        Eigen::VectorXd v(count);
        std::memcpy(v.data(), bytes.data() + offset, sizeof(double) * count);
        return v;
    };
    const Eigen::VectorXd params = read_doubles(blob, n);
    out.state.adam_m = read_doubles(blob + sizeof(double) * n, n);
    out.state.adam_v = read_doubles(blob + 2 * sizeof(double) * n, n);
    scatter_params(params, &out.state);
    return out;
}

}  // namespace qdbnn

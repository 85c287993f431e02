#pragma once

#include "advmem/core.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/optim.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace advmem {

inline constexpr int checkpoint_version = 1;

struct CheckpointMetadata {
    int epoch = 0;
    std::string config_hash;
    io::json extra = io::json::object();
};

struct Checkpoint {
    ModelParameters params;
    OptimizerState optimizer;
    CheckpointMetadata metadata;
};

inline io::json arch_to_json(const ArchSpec& a)
{
    return io::json{{"family", to_string(a.family)},
                    {"widths", a.widths},
                    {"class_count", a.class_count},
                    {"input_shape", a.input_shape.dims},
                    {"init_seed", a.init_seed}};
}

inline ArchSpec arch_from_json(const io::json& j)
{
    ArchSpec a;
    a.family = family_from_string(j.at("family").get<std::string>());
    a.widths = j.value("widths", std::vector<std::size_t>{});
    a.class_count = j.at("class_count").get<int>();
    a.input_shape.dims = j.at("input_shape").get<std::vector<std::size_t>>();
    a.init_seed = j.value("init_seed", std::uint64_t{0});
    return a;
}

/// FNV-1a 64-bit digest, hex encoded.
inline std::string hash_text(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

namespace detail {
inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
}  // namespace detail

/// Directory layout: manifest.json plus one little-endian f64 file per array.
inline void save_checkpoint(const ModelParameters& params, const OptimizerState& optimizer,
                            const CheckpointMetadata& metadata, const std::filesystem::path& dir)
{
    params.validate();
    std::filesystem::create_directories(dir);
    io::json arrays = io::json::array();
    for (std::size_t i = 0; i < params.groups.size(); ++i) {
        const auto& g = params.groups[i];
        const std::string file = "param_" + std::to_string(i) + ".bin";
        io::write_raw(dir / file, detail::to_std(g.values));
        arrays.push_back({{"name", g.name}, {"role", to_string(g.role)}, {"shape", g.shape}, {"dtype", "f64"},
                          {"file", file}});
    }
    io::json opt_arrays = io::json::array();
    for (std::size_t i = 0; i < optimizer.buffers.size(); ++i) {
        const std::string file = "momentum_" + std::to_string(i) + ".bin";
        io::write_raw(dir / file, detail::to_std(optimizer.buffers[i]));
        opt_arrays.push_back({{"name", params.groups.at(i).name}, {"dtype", "f64"}, {"file", file},
                              {"size", optimizer.buffers[i].size()}});
    }
    io::json manifest{{"version", checkpoint_version},
                      {"arch_tag", params.arch_tag},
                      {"arch", arch_to_json(params.arch)},
                      {"epoch", metadata.epoch},
                      {"config_hash", metadata.config_hash},
                      {"arrays", arrays},
                      {"optimizer",
                       {{"momentum", optimizer.momentum}, {"weight_decay", optimizer.weight_decay}, {"arrays", opt_arrays}}},
                      {"extra", metadata.extra}};
    io::write_json(dir / "manifest.json", manifest);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir,
                                  const std::optional<std::string>& expected_arch_tag = std::nullopt)
{
    const auto manifest_path = dir / "manifest.json";
    require(std::filesystem::exists(manifest_path), "checkpoint manifest not found: " + manifest_path.string());
    const auto m = io::read_json(manifest_path);
    Checkpoint ck;
    try {
        const int version = m.at("version").get<int>();
        require(version == checkpoint_version,
                "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(checkpoint_version) + ")");
        const auto tag = m.at("arch_tag").get<std::string>();
        if (expected_arch_tag) {
            require(tag == *expected_arch_tag, "checkpoint arch_tag '" + tag + "' does not match expected '" +
                                                   *expected_arch_tag + "'");
        }
        ck.params = zero_model(arch_from_json(m.at("arch")));
        require(ck.params.arch_tag == tag, "checkpoint arch_tag does not match its architecture description");
        const auto& arrays = m.at("arrays");
        require(arrays.size() == ck.params.groups.size(), "checkpoint array count does not match the architecture");
        for (std::size_t i = 0; i < arrays.size(); ++i) {
            auto& g = ck.params.groups[i];
            const auto& a = arrays[i];
            require(a.at("name").get<std::string>() == g.name, "checkpoint array order/name mismatch at " + g.name);
            require(a.at("shape").get<std::vector<std::size_t>>() == g.shape, "checkpoint shape mismatch for " + g.name);
            require(a.at("dtype").get<std::string>() == "f64", "checkpoint dtype must be f64");
            const auto raw = io::read_raw<double>(dir / a.at("file").get<std::string>(), g.size());
            g.values = Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size()));
        }
        const auto& opt = m.at("optimizer");
        ck.optimizer.momentum = opt.at("momentum").get<double>();
        ck.optimizer.weight_decay = opt.at("weight_decay").get<double>();
        for (const auto& a : opt.at("arrays")) {
            const auto size = a.at("size").get<std::size_t>();
            const auto raw = io::read_raw<double>(dir / a.at("file").get<std::string>(), size);
            ck.optimizer.buffers.emplace_back(Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(size)));
        }
        ck.metadata.epoch = m.at("epoch").get<int>();
        ck.metadata.config_hash = m.value("config_hash", std::string{});
        ck.metadata.extra = m.value("extra", io::json::object());
    } catch (const io::json::exception& e) {
        throw Error("corrupt checkpoint manifest in " + dir.string() + ": " + e.what());
    }
    ck.params.validate();
    return ck;
}

}  // namespace advmem

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mivae/diffcore/rng.hpp"
#include "mivae/errors.hpp"

namespace mivae::cli {

inline constexpr const char* manifest_format = "mivae-run-manifest";
inline constexpr int manifest_version = 1;

// Everything a run needs to be repeated: the command, the resolved config with
// every default filled in, the inputs (with a content hash) and the seed.
struct RunManifest {
    std::string command;
    std::optional<std::string> config_path;
    nlohmann::json config;  // resolved
    std::uint64_t seed = 0;
    std::string out;        // artifact directory, or output file for synth/predict
    nlohmann::json inputs = nlohmann::json::object();   // name -> {path, fnv1a}
    nlohmann::json options = nlohmann::json::object();  // folds, repeats, jobs
};

inline std::string file_fingerprint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(mivae::detail::fnv1a(bytes)));
    return buf;
}

inline void add_input(RunManifest& m, const std::string& name, const std::filesystem::path& path) {
    m.inputs[name] = {{"path", path.string()}, {"fnv1a", file_fingerprint(path)}};
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    return {{"format", manifest_format},
            {"format_version", manifest_version},
            {"command", m.command},
            {"config_path", m.config_path ? nlohmann::json(*m.config_path) : nlohmann::json(nullptr)},
            {"config", m.config},
            {"seed", m.seed},
            {"out", m.out},
            {"inputs", m.inputs},
            {"options", m.options}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != manifest_format) throw ConfigError("manifest: not a run manifest");
        if (j.at("format_version") != manifest_version) {
            throw ConfigError("manifest: unsupported format_version " + j.at("format_version").dump());
        }
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        if (!j.at("config_path").is_null()) m.config_path = j.at("config_path").get<std::string>();
        m.config = j.at("config");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.out = j.at("out").get<std::string>();
        m.inputs = j.at("inputs");
        m.options = j.at("options");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << manifest_to_json(m).dump(2) << '\n';
    out.flush();
    if (!out) throw Error("failed writing manifest " + path.string());
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
    try {
        return manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// Where a run's manifest lives: inside an output directory, or next to an output file.
inline std::filesystem::path manifest_path_for_dir(const std::filesystem::path& dir) { return dir / "manifest.json"; }
inline std::filesystem::path manifest_path_for_file(const std::filesystem::path& file) {
    return file.string() + ".manifest.json";
}

} // namespace mivae::cli

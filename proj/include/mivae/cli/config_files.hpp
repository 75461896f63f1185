#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mivae/data/synthetic.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/export.hpp"
#include "mivae/harness/grid.hpp"
#include "mivae/harness/train.hpp"
#include "mivae/model/checkpoint.hpp"
#include "mivae/model/config.hpp"

namespace mivae::cli {

using nlohmann::json;

inline constexpr int schema_version = 1;

// Model + training settings shared by train and cv. input_dim may be left out;
// it is then taken from the data.
struct ExperimentConfig {
    model::MivaeConfig model;
    harness::TrainConfig train;
    double validation_fraction = 0.1;
};

struct GridConfig {
    harness::GridSpec grid;
    ExperimentConfig base;
};

namespace detail {

// Fail-closed: any key not in `allowed` is a typo until proven otherwise.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known |= key == a;
        if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_if(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "': " + j.at(key).dump());
    }
}

inline void check_schema(const json& j, const std::string& where) {
    if (!j.contains("schema_version")) throw ConfigError(where + ": missing schema_version");
    if (j.at("schema_version") != schema_version) {
        throw ConfigError(where + ": unsupported schema_version " + j.at("schema_version").dump() + " (expected " +
                          std::to_string(schema_version) + ")");
    }
}

inline model::MivaeConfig model_from(const json& j, model::MivaeConfig c, const std::string& where) {
    check_keys(j, {"input_dim", "bag_latent_dim", "instance_latent_dim", "hidden_layers", "hidden_units", "alpha",
                   "likelihood", "pooling"},
               where);
    read_if(j, "input_dim", c.input_dim, where);
    read_if(j, "bag_latent_dim", c.bag_latent_dim, where);
    read_if(j, "instance_latent_dim", c.instance_latent_dim, where);
    read_if(j, "hidden_layers", c.hidden_layers, where);
    read_if(j, "hidden_units", c.hidden_units, where);
    read_if(j, "alpha", c.alpha, where);
    std::string text;
    read_if(j, "likelihood", text, where);
    if (!text.empty()) c.likelihood = model::likelihood_from_string(text);
    std::string pooling = "max";
    read_if(j, "pooling", pooling, where);
    if (pooling != "max") throw ConfigError(where + ": only max pooling is implemented, got '" + pooling + "'");
    return c;
}

inline harness::TrainConfig train_from(const json& j, harness::TrainConfig c, const std::string& where) {
    check_keys(j, {"epochs", "batch_bags", "learning_rate", "weight_decay", "seed"}, where);
    read_if(j, "epochs", c.epochs, where);
    read_if(j, "batch_bags", c.batch_bags, where);
    read_if(j, "learning_rate", c.learning_rate, where);
    read_if(j, "weight_decay", c.weight_decay, where);
    read_if(j, "seed", c.seed, where);
    c.validate();
    return c;
}

inline void check_fraction(double f, const std::string& where) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError(where + ": validation_fraction must lie in (0, 1)");
}

inline json read_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace detail

inline ExperimentConfig experiment_from_json(const json& j, const std::string& where = "config") {
    detail::check_keys(j, {"schema_version", "model", "train", "validation_fraction"}, where);
    detail::check_schema(j, where);
    ExperimentConfig c;
    if (j.contains("model")) c.model = detail::model_from(j.at("model"), c.model, where + ".model");
    if (j.contains("train")) c.train = detail::train_from(j.at("train"), c.train, where + ".train");
    detail::read_if(j, "validation_fraction", c.validation_fraction, where);
    detail::check_fraction(c.validation_fraction, where);
    return c;
}

// Every default materialized, so the file alone reproduces the run.
inline json experiment_to_json(const ExperimentConfig& c) {
    return {{"schema_version", schema_version},
            {"model", model::config_to_json(c.model)},
            {"train", harness::train_config_to_json(c.train)},
            {"validation_fraction", c.validation_fraction}};
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return experiment_from_json(detail::read_json_file(path, "config file"), path.string());
}

// Fills input_dim from the data, or checks it if the config gave one.
inline void bind_input_dim(ExperimentConfig& c, std::size_t data_dim) {
    if (c.model.input_dim == 0) {
        c.model.input_dim = data_dim;
    } else if (c.model.input_dim != data_dim) {
        throw DimensionError("config input_dim is " + std::to_string(c.model.input_dim) + " but the data has " +
                             std::to_string(data_dim) + " features");
    }
    c.model.validate();
}

// Axes left out of the grid file collapse to the base config's single value.
inline GridConfig grid_from_json(const json& j, const std::string& where = "grid") {
    detail::check_keys(j, {"schema_version", "axes", "model", "train", "validation_fraction"}, where);
    detail::check_schema(j, where);
    json base = j;
    base.erase("axes");
    GridConfig g{{}, experiment_from_json(base, where)};
    const auto& m = g.base.model;
    const auto& t = g.base.train;
    g.grid = {{m.hidden_layers}, {m.hidden_units}, {m.bag_latent_dim}, {m.alpha}, {t.learning_rate}, {t.weight_decay}};
    if (m.bag_latent_dim != m.instance_latent_dim) {
        throw ConfigError(where + ": the grid uses one latent size for both factors; bag_latent_dim and "
                                  "instance_latent_dim differ");
    }
    if (j.contains("axes")) {
        const json& a = j.at("axes");
        const std::string at = where + ".axes";
        detail::check_keys(a, {"hidden_layers", "hidden_units", "latent_dims", "alphas", "learning_rates", "weight_decays"},
                           at);
        detail::read_if(a, "hidden_layers", g.grid.hidden_layers, at);
        detail::read_if(a, "hidden_units", g.grid.hidden_units, at);
        detail::read_if(a, "latent_dims", g.grid.latent_dims, at);
        detail::read_if(a, "alphas", g.grid.alphas, at);
        detail::read_if(a, "learning_rates", g.grid.learning_rates, at);
        detail::read_if(a, "weight_decays", g.grid.weight_decays, at);
    }
    g.grid.validate();
    return g;
}

inline json grid_to_json(const GridConfig& g) {
    json j = experiment_to_json(g.base);
    j["axes"] = {{"hidden_layers", g.grid.hidden_layers}, {"hidden_units", g.grid.hidden_units},
                 {"latent_dims", g.grid.latent_dims},     {"alphas", g.grid.alphas},
                 {"learning_rates", g.grid.learning_rates}, {"weight_decays", g.grid.weight_decays}};
    return j;
}

inline GridConfig load_grid(const std::filesystem::path& path) {
    return grid_from_json(detail::read_json_file(path, "grid file"), path.string());
}

// Synthetic spec file. Loadings and the positivity direction are drawn from the
// run seed unless given explicitly.
struct SynthConfig {
    data::SyntheticSpec spec;
    bool explicit_loadings = false;
};

namespace detail {

inline diff::Tensor matrix_from(const json& j, const std::string& where) {
    try {
        const auto rows = j.get<std::vector<std::vector<double>>>();
        if (rows.empty() || rows[0].empty()) throw ConfigError(where + ": empty matrix");
        auto t = diff::Tensor::zeros(rows.size(), rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows[0].size()) throw ConfigError(where + ": ragged matrix");
            for (std::size_t c = 0; c < rows[r].size(); ++c) t(r, c) = rows[r][c];
        }
        return t;
    } catch (const json::exception&) {
        throw ConfigError(where + ": expected a matrix of numbers");
    }
}

inline json matrix_to(const diff::Tensor& t) {
    json rows = json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
        rows.push_back(row);
    }
    return rows;
}

} // namespace detail

inline SynthConfig synth_from_json(const json& j, const std::string& where = "spec") {
    detail::check_keys(j,
                       {"schema_version", "num_bags", "min_instances", "max_instances", "feature_dim", "bag_latent_dim",
                        "instance_latent_dim", "class_offset", "threshold", "noise", "bag_loading", "instance_loading",
                        "positivity_direction"},
                       where);
    detail::check_schema(j, where);
    SynthConfig c;
    auto& s = c.spec;
    detail::read_if(j, "num_bags", s.num_bags, where);
    detail::read_if(j, "min_instances", s.min_instances, where);
    detail::read_if(j, "max_instances", s.max_instances, where);
    detail::read_if(j, "feature_dim", s.feature_dim, where);
    detail::read_if(j, "bag_latent_dim", s.bag_latent_dim, where);
    detail::read_if(j, "instance_latent_dim", s.instance_latent_dim, where);
    detail::read_if(j, "class_offset", s.class_offset, where);
    detail::read_if(j, "threshold", s.threshold, where);
    detail::read_if(j, "noise", s.noise, where);
    const int given = j.contains("bag_loading") + j.contains("instance_loading") + j.contains("positivity_direction");
    if (given != 0 && given != 3) {
        throw ConfigError(where + ": give all of bag_loading, instance_loading and positivity_direction, or none");
    }
    if (given == 3) {
        c.explicit_loadings = true;
        s.bag_loading = detail::matrix_from(j.at("bag_loading"), where + ".bag_loading");
        s.instance_loading = detail::matrix_from(j.at("instance_loading"), where + ".instance_loading");
        detail::read_if(j, "positivity_direction", s.positivity_direction, where);
    }
    return c;
}

inline SynthConfig load_synth(const std::filesystem::path& path) {
    return synth_from_json(detail::read_json_file(path, "spec file"), path.string());
}

// The spec with loadings filled in, ready to sample.
inline data::SyntheticSpec resolve_synth(const SynthConfig& c, std::uint64_t seed) {
    data::SyntheticSpec s = c.explicit_loadings ? c.spec : data::with_random_loadings(c.spec, seed);
    s.validate();
    return s;
}

inline json synth_to_json(const data::SyntheticSpec& s) {
    return {{"schema_version", schema_version},
            {"num_bags", s.num_bags},
            {"min_instances", s.min_instances},
            {"max_instances", s.max_instances},
            {"feature_dim", s.feature_dim},
            {"bag_latent_dim", s.bag_latent_dim},
            {"instance_latent_dim", s.instance_latent_dim},
            {"class_offset", s.class_offset},
            {"threshold", s.threshold},
            {"noise", s.noise},
            {"bag_loading", detail::matrix_to(s.bag_loading)},
            {"instance_loading", detail::matrix_to(s.instance_loading)},
            {"positivity_direction", s.positivity_direction}};
}

} // namespace mivae::cli

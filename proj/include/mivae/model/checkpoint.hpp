#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mivae/data/standardize.hpp"
#include "mivae/diffcore/adamw.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/errors.hpp"
#include "mivae/model/mivae.hpp"

namespace mivae::model {

inline constexpr const char* checkpoint_format = "mivae-checkpoint";
inline constexpr int checkpoint_version = 1;

inline nlohmann::json config_to_json(const MivaeConfig& c) {
    return {{"input_dim", c.input_dim},
            {"bag_latent_dim", c.bag_latent_dim},
            {"instance_latent_dim", c.instance_latent_dim},
            {"hidden_layers", c.hidden_layers},
            {"hidden_units", c.hidden_units},
            {"alpha", c.alpha},
            {"likelihood", to_string(c.likelihood)},
            {"pooling", "max"}};
}

inline MivaeConfig config_from_json(const nlohmann::json& j) {
    MivaeConfig c;
    try {
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.bag_latent_dim = j.at("bag_latent_dim").get<std::size_t>();
        c.instance_latent_dim = j.at("instance_latent_dim").get<std::size_t>();
        c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
        c.hidden_units = j.at("hidden_units").get<std::size_t>();
        c.alpha = j.at("alpha").get<double>();
        c.likelihood = likelihood_from_string(j.at("likelihood").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// Everything needed to resume training or run prediction.
struct Checkpoint {
    MivaeParams model;
    std::optional<diff::AdamW> optimizer;
    std::optional<std::string> rng_state;
    std::optional<data::FeatureScaler> scaler;
};

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"values", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<diff::Shape>(), j.at("values").get<std::vector<double>>());
}

} // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
    nlohmann::json j;
    j["format"] = checkpoint_format;
    j["version"] = checkpoint_version;
    j["config"] = config_to_json(ck.model.config);
    auto& params = j["parameters"] = nlohmann::json::array();
    for (const auto& p : ck.model.params) {
        if (!p.value.all_finite()) throw NumericError("checkpoint: parameter '" + p.name + "' is not finite");
        auto t = detail::tensor_to_json(p.value);
        t["name"] = p.name;
        params.push_back(std::move(t));
    }
    if (ck.optimizer) {
        const auto& opt = *ck.optimizer;
        nlohmann::json o{{"learning_rate", opt.config().learning_rate},
                         {"beta1", opt.config().beta1},
                         {"beta2", opt.config().beta2},
                         {"epsilon", opt.config().epsilon},
                         {"weight_decay", opt.config().weight_decay},
                         {"step", opt.step_count()}};
        auto& first = o["first_moments"] = nlohmann::json::array();
        auto& second = o["second_moments"] = nlohmann::json::array();
        for (const auto& t : opt.first_moments()) first.push_back(detail::tensor_to_json(t));
        for (const auto& t : opt.second_moments()) second.push_back(detail::tensor_to_json(t));
        j["optimizer"] = std::move(o);
    }
    if (ck.rng_state) j["rng_state"] = *ck.rng_state;
    if (ck.scaler) j["scaler"] = {{"mean", ck.scaler->mean}, {"std", ck.scaler->std}};
    return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != checkpoint_format) throw DataError("checkpoint: unknown format");
        if (j.at("version").get<int>() != checkpoint_version) {
            throw DataError("checkpoint: unsupported version " + j.at("version").dump());
        }
        Checkpoint ck;
        ck.model = MivaeParams::create(config_from_json(j.at("config")), 0);
        const auto& params = j.at("parameters");
        if (params.size() != ck.model.params.size()) {
            throw DimensionError("checkpoint: holds " + std::to_string(params.size()) + " tensors, model has " +
                                 std::to_string(ck.model.params.size()));
        }
        for (const auto& p : params) {
            const std::string name = p.at("name").get<std::string>();
            auto& target = ck.model.params[ck.model.params.index_of(name)];
            Tensor value = detail::tensor_from_json(p);
            if (!value.same_shape(target.value)) {
                throw DimensionError("checkpoint: parameter '" + name + "' is " + diff::matrix_shape_string(value) +
                                     ", expected " + diff::matrix_shape_string(target.value));
            }
            target.value = std::move(value);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            diff::AdamWConfig oc;
            oc.learning_rate = o.at("learning_rate").get<double>();
            oc.beta1 = o.at("beta1").get<double>();
            oc.beta2 = o.at("beta2").get<double>();
            oc.epsilon = o.at("epsilon").get<double>();
            oc.weight_decay = o.at("weight_decay").get<double>();
            diff::AdamW opt(ck.model.params, oc);
            std::vector<Tensor> first, second;
            for (const auto& t : o.at("first_moments")) first.push_back(detail::tensor_from_json(t));
            for (const auto& t : o.at("second_moments")) second.push_back(detail::tensor_from_json(t));
            opt.restore(o.at("step").get<std::uint64_t>(), std::move(first), std::move(second));
            ck.optimizer = std::move(opt);
        }
        if (j.contains("rng_state")) ck.rng_state = j.at("rng_state").get<std::string>();
        if (j.contains("scaler")) {
            data::FeatureScaler s;
            s.mean = j.at("scaler").at("mean").get<std::vector<double>>();
            s.std = j.at("scaler").at("std").get<std::vector<double>>();
            if (s.mean.size() != ck.model.config.input_dim || s.std.size() != ck.model.config.input_dim) {
                throw DimensionError("checkpoint: scaler dimension does not match input_dim");
            }
            ck.scaler = std::move(s);
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed (") + e.what() + ")");
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(ck).dump(1) << '\n';
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

// Rejects a checkpoint whose input dimension differs from the data at hand.
inline void require_input_dim(const MivaeConfig& config, std::size_t data_dim) {
    if (config.input_dim != data_dim) {
        throw DimensionError("checkpoint expects " + std::to_string(config.input_dim) + " features, data has " +
                             std::to_string(data_dim));
    }
}

} // namespace mivae::model

#pragma once

#include <cstddef>
#include <string>

#include "mivae/errors.hpp"

namespace mivae::model {

enum class Likelihood { gaussian_unit_variance, bernoulli };

inline std::string to_string(Likelihood l) {
    return l == Likelihood::bernoulli ? "bernoulli" : "gaussian_unit_variance";
}

inline Likelihood likelihood_from_string(const std::string& s) {
    if (s == "gaussian_unit_variance") return Likelihood::gaussian_unit_variance;
    if (s == "bernoulli") return Likelihood::bernoulli;
    throw ConfigError("unknown likelihood '" + s + "' (expected gaussian_unit_variance or bernoulli)");
}

// Architecture of one model. hidden_layers/hidden_units apply to every MLP
// (encoders, decoder, label prior). Pooling is always max.
struct MivaeConfig {
    std::size_t input_dim = 0;  // d
    std::size_t bag_latent_dim = 16;
    std::size_t instance_latent_dim = 16;
    std::size_t hidden_layers = 2;
    std::size_t hidden_units = 100;
    double alpha = 100.0;
    Likelihood likelihood = Likelihood::gaussian_unit_variance;

    void validate() const {
        if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
        if (bag_latent_dim == 0 || instance_latent_dim == 0) throw ConfigError("model: latent dims must be positive");
        if (hidden_layers == 0 || hidden_units == 0) throw ConfigError("model: hidden_layers and hidden_units must be positive");
        if (!(alpha >= 0.0)) throw ConfigError("model: alpha must be >= 0");
    }

    friend bool operator==(const MivaeConfig&, const MivaeConfig&) = default;
};

} // namespace mivae::model

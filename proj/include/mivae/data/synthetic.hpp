#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::data {

// Parameters of the two-level generative sampler:
//   y ~ Bernoulli(0.5)
//   z_B ~ N(class_offset[y] * 1, I)                 (shared by the bag)
//   z_I_j ~ N(0, I)                                  (per instance)
//   x_j = bag_loading z_B + instance_loading z_I_j + noise * eps
// Instance j is positive iff y = 1 and <positivity_direction, z_I_j> > threshold.
struct SyntheticSpec {
    static constexpr std::size_t max_draws = 1000;

    std::size_t num_bags = 100;
    std::size_t min_instances = 5;
    std::size_t max_instances = 15;
    std::size_t feature_dim = 10;
    std::size_t bag_latent_dim = 2;
    std::size_t instance_latent_dim = 2;
    std::array<double, 2> class_offset{-1.0, 1.0};
    diff::Tensor bag_loading;       // [d x D_zB]
    diff::Tensor instance_loading;  // [d x D_zI]
    std::vector<double> positivity_direction;  // D_zI
    double threshold = 1.0;
    double noise = 0.1;

    void validate() const {
        if (num_bags == 0 || feature_dim == 0 || bag_latent_dim == 0 || instance_latent_dim == 0) {
            throw ConfigError("synthetic spec: dimensions and bag count must be positive");
        }
        if (min_instances == 0 || min_instances > max_instances) {
            throw ConfigError("synthetic spec: need 1 <= min_instances <= max_instances");
        }
        if (bag_loading.rows() != feature_dim || bag_loading.cols() != bag_latent_dim) {
            throw DimensionError("synthetic spec: bag_loading must be " + std::to_string(feature_dim) + "x" +
                                 std::to_string(bag_latent_dim) + ", got " + diff::matrix_shape_string(bag_loading));
        }
        if (instance_loading.rows() != feature_dim || instance_loading.cols() != instance_latent_dim) {
            throw DimensionError("synthetic spec: instance_loading must be " + std::to_string(feature_dim) + "x" +
                                 std::to_string(instance_latent_dim) + ", got " +
                                 diff::matrix_shape_string(instance_loading));
        }
        if (positivity_direction.size() != instance_latent_dim) {
            throw DimensionError("synthetic spec: positivity_direction must have " +
                                 std::to_string(instance_latent_dim) + " entries");
        }
        if (!(noise >= 0.0)) throw ConfigError("synthetic spec: noise must be non-negative");
    }
};

// Fills the loadings with N(0, 1/D) entries and draws a unit positivity direction.
inline SyntheticSpec with_random_loadings(SyntheticSpec spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-loadings"));
    spec.bag_loading = diff::Tensor::zeros(spec.feature_dim, spec.bag_latent_dim);
    for (double& v : spec.bag_loading.values()) v = rng.normal() / std::sqrt(static_cast<double>(spec.bag_latent_dim));
    spec.instance_loading = diff::Tensor::zeros(spec.feature_dim, spec.instance_latent_dim);
    for (double& v : spec.instance_loading.values()) {
        v = rng.normal() / std::sqrt(static_cast<double>(spec.instance_latent_dim));
    }
    spec.positivity_direction.assign(spec.instance_latent_dim, 0.0);
    double norm = 0.0;
    for (double& v : spec.positivity_direction) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : spec.positivity_direction) v /= norm;
    return spec;
}

inline MilDataset sample_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const std::size_t d = spec.feature_dim;
    const std::size_t db = spec.bag_latent_dim;
    const std::size_t di = spec.instance_latent_dim;
    auto score = [&](const std::vector<double>& z, std::size_t row) {
        double s = 0.0;
        for (std::size_t k = 0; k < di; ++k) s += spec.positivity_direction[k] * z[row * di + k];
        return s;
    };

    MilDataset ds;
    ds.name = "synthetic";
    ds.feature_dim = d;
    const int id_width = static_cast<int>(std::to_string(spec.num_bags - 1).size());
    for (std::size_t b = 0; b < spec.num_bags; ++b) {
        Bag bag;
        char id[32];
        std::snprintf(id, sizeof(id), "bag_%0*zu", id_width, b);
        bag.id = id;
        bag.label = rng.bernoulli(0.5) ? 1 : 0;
        std::vector<double> zb(db);
        for (double& v : zb) v = spec.class_offset[bag.label] + rng.normal();
        const std::size_t n = rng.uniform_index(spec.min_instances, spec.max_instances);

        std::vector<double> zi(n * di);
        if (bag.label == 1) {
            std::size_t draws = 0;
            bool any_positive = false;
            while (!any_positive) {
                if (++draws > SyntheticSpec::max_draws) {
                    throw InfeasibleSpecError("synthetic spec: no positive instance after " +
                                              std::to_string(SyntheticSpec::max_draws) + " draws for bag " + bag.id);
                }
                for (double& v : zi) v = rng.normal();
                for (std::size_t j = 0; j < n && !any_positive; ++j) any_positive = score(zi, j) > spec.threshold;
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                std::size_t draws = 0;
                do {
                    if (++draws > SyntheticSpec::max_draws) {
                        throw InfeasibleSpecError("synthetic spec: cannot draw a negative instance after " +
                                                  std::to_string(SyntheticSpec::max_draws) + " draws for bag " + bag.id);
                    }
                    for (std::size_t k = 0; k < di; ++k) zi[j * di + k] = rng.normal();
                } while (score(zi, j) > spec.threshold);
            }
        }

        bag.instances = diff::Tensor::zeros(n, d);
        std::vector<int> labels(n, 0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t f = 0; f < d; ++f) {
                double x = 0.0;
                for (std::size_t k = 0; k < db; ++k) x += spec.bag_loading(f, k) * zb[k];
                for (std::size_t k = 0; k < di; ++k) x += spec.instance_loading(f, k) * zi[j * di + k];
                bag.instances(j, f) = x + spec.noise * rng.normal();
            }
            labels[j] = (bag.label == 1 && score(zi, j) > spec.threshold) ? 1 : 0;
        }
        bag.instance_labels = std::move(labels);
        ds.bags.push_back(std::move(bag));
    }
    ds.validate();
    return ds;
}

} // namespace mivae::data

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mivae/diffcore/parameters.hpp"
#include "mivae/diffcore/tensor.hpp"
#include "mivae/errors.hpp"

namespace mivae::diff {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};

// Adam with decoupled weight decay:
//   p <- p - lr * wd * p
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Moments are kept per parameter in ParameterSet order.
class AdamW {
public:
    AdamW() = default;
    AdamW(const ParameterSet& params, AdamWConfig config) : config_(config) {
        if (!(config.learning_rate > 0.0)) throw ConfigError("AdamW: learning rate must be positive");
        if (config.weight_decay < 0.0) throw ConfigError("AdamW: weight decay must be non-negative");
        first_.reserve(params.size());
        second_.reserve(params.size());
        for (const auto& p : params) {
            first_.emplace_back(p.value.shape(), 0.0);
            second_.emplace_back(p.value.shape(), 0.0);
        }
    }

    // Applies one update using the gradients currently held in params.
    void step(ParameterSet& params) {
        if (params.size() != first_.size()) {
            throw DimensionError("AdamW: optimizer tracks " + std::to_string(first_.size()) +
                                 " parameters, set has " + std::to_string(params.size()));
        }
        for (const auto& p : params) {
            for (std::size_t i = 0; i < p.grad.size(); ++i) {
                if (!std::isfinite(p.grad[i])) {
                    throw NumericError("AdamW: non-finite gradient in parameter '" + p.name + "' at index " +
                                       std::to_string(i) + " (value " + std::to_string(p.grad[i]) + ")");
                }
            }
        }
        ++step_;
        const double t = static_cast<double>(step_);
        const double bias1 = 1.0 - std::pow(config_.beta1, t);
        const double bias2 = 1.0 - std::pow(config_.beta2, t);
        const double lr = config_.learning_rate;
        const double decay = lr * config_.weight_decay;
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k];
            if (!p.value.same_shape(first_[k])) {
                throw DimensionError("AdamW: moment shape mismatch for '" + p.name + "'");
            }
            double* w = p.value.data();
            const double* g = p.grad.data();
            double* m = first_[k].data();
            double* v = second_[k].data();
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                w[i] -= decay * w[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
                const double m_hat = m[i] / bias1;
                const double v_hat = v[i] / bias2;
                w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            }
        }
    }

    const AdamWConfig& config() const noexcept { return config_; }
    std::uint64_t step_count() const noexcept { return step_; }
    const std::vector<Tensor>& first_moments() const noexcept { return first_; }
    const std::vector<Tensor>& second_moments() const noexcept { return second_; }

    // Restores a saved state; shapes must line up with the parameter set.
    void restore(std::uint64_t step, std::vector<Tensor> first, std::vector<Tensor> second) {
        if (first.size() != first_.size() || second.size() != second_.size()) {
            throw DimensionError("AdamW: restored state has the wrong number of moments");
        }
        for (std::size_t k = 0; k < first.size(); ++k) {
            if (!first[k].same_shape(first_[k]) || !second[k].same_shape(second_[k])) {
                throw DimensionError("AdamW: restored moment " + std::to_string(k) + " has the wrong shape");
            }
        }
        step_ = step;
        first_ = std::move(first);
        second_ = std::move(second);
    }

private:
    AdamWConfig config_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    std::uint64_t step_ = 0;
};

} // namespace mivae::diff

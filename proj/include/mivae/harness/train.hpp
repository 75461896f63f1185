#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mivae/data/bag.hpp"
#include "mivae/diffcore/adamw.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/metrics.hpp"
#include "mivae/model/mivae.hpp"

namespace mivae::harness {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_bags = 8;
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_bags < 1) throw ConfigError("train: batch_bags must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be non-negative");
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double validation_loss = 0;
    double validation_accuracy = 0;
    double seconds = 0;
};

// What model selection is allowed to see about an epoch.
struct ValidationRecord {
    double loss = 0;
    double accuracy = 0;
};

// Index of the epoch to keep: lowest validation loss, then higher validation
// accuracy, then the earliest epoch.
inline std::size_t select_best_epoch(std::span<const ValidationRecord> records) {
    if (records.empty()) throw ContractError("select_best_epoch: no epochs");
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& r = records[i];
        const auto& b = records[best];
        if (r.loss < b.loss || (r.loss == b.loss && r.accuracy > b.accuracy)) best = i;
    }
    return best;
}

struct TrainResult {
    model::MivaeParams best;
    std::size_t best_epoch = 0;  // 1-based
    std::vector<EpochLog> log;
    model::MivaeParams last;
    diff::AdamW optimizer;
    std::string rng_state;
};

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
};

// Mean per-bag loss with a noise stream that restarts at every call, so
// validation losses of different epochs see the same draws.
inline double mean_loss(const model::MivaeParams& m, const data::MilDataset& ds, std::uint64_t noise_seed) {
    if (ds.empty()) throw ContractError("mean_loss: empty dataset");
    Rng rng(noise_seed);
    double total = 0.0;
    for (const auto& b : ds.bags) total += model::loss(m, b.instances, b.label, rng);
    return total / static_cast<double>(ds.size());
}

inline TrainResult train(const data::MilDataset& train_set, const data::MilDataset& validation,
                         const model::MivaeConfig& model_config, const TrainConfig& config, const TrainHooks& hooks = {}) {
    config.validate();
    model_config.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    if (validation.empty()) throw ConfigError("train: empty validation set");
    if (train_set.feature_dim != model_config.input_dim || validation.feature_dim != model_config.input_dim) {
        throw DimensionError("train: data has " + std::to_string(train_set.feature_dim) + " features, model expects " +
                             std::to_string(model_config.input_dim));
    }

    model::MivaeParams m = model::MivaeParams::create(model_config, derive_seed(config.seed, "model-init"));
    diff::AdamW opt(m.params, {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng rng(derive_seed(config.seed, "train"));
    const std::uint64_t validation_seed = derive_seed(config.seed, "validation-noise");

    TrainResult result{m, 0, {}, {}, {}, {}};
    std::vector<ValidationRecord> records;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng.engine());
        double total = 0.0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_bags) {
            const std::size_t last = std::min(order.size(), first + config.batch_bags);
            const double weight = 1.0 / static_cast<double>(last - first);
            m.params.zero_grad();
            for (std::size_t i = first; i < last; ++i) {
                const data::Bag& bag = train_set.bags[order[i]];
                double l = 0;
                try {
                    const auto noise = model::draw_noise(model_config, bag.size(), rng);
                    l = model::accumulate_gradients(m, bag.instances, bag.label, noise, weight);
                } catch (const NumericError& e) {
                    throw NumericError("epoch " + std::to_string(epoch) + ", bag " + bag.id + ": " + e.what());
                }
                total += l;
            }
            try {
                opt.step(m.params);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch at " + std::to_string(first) + ": " + e.what());
            }
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = total / static_cast<double>(train_set.size());
        try {
            entry.validation_loss = mean_loss(m, validation, validation_seed);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ", validation: " + e.what());
        }
        entry.validation_accuracy = evaluate_bag_accuracy(m, validation);
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back(entry);
        records.push_back({entry.validation_loss, entry.validation_accuracy});
        if (select_best_epoch(records) == records.size() - 1) {
            result.best = m;
            result.best_epoch = epoch;
        }
        if (hooks.on_epoch) hooks.on_epoch(entry);
    }
    result.last = std::move(m);
    result.optimizer = std::move(opt);
    result.rng_state = rng.state();
    return result;
}

} // namespace mivae::harness

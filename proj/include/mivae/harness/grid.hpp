#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mivae/data/folds.hpp"
#include "mivae/data/standardize.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/train.hpp"
#include "mivae/harness/work_pool.hpp"

namespace mivae::harness {

// Candidate values per axis; one latent size is used for both D_zB and D_zI.
struct GridSpec {
    std::vector<std::size_t> hidden_layers{2, 3};
    std::vector<std::size_t> hidden_units{100, 200};
    std::vector<std::size_t> latent_dims{16, 32, 64};
    std::vector<double> alphas{100, 1000, 10000};
    std::vector<double> learning_rates{1e-3, 1e-4};
    std::vector<double> weight_decays{1e-2, 1e-3, 1e-4};

    void validate() const {
        if (hidden_layers.empty() || hidden_units.empty() || latent_dims.empty() || alphas.empty() ||
            learning_rates.empty() || weight_decays.empty()) {
            throw ConfigError("grid: every axis needs at least one value");
        }
    }

    std::size_t size() const {
        return hidden_layers.size() * hidden_units.size() * latent_dims.size() * alphas.size() *
               learning_rates.size() * weight_decays.size();
    }
};

struct GridCell {
    model::MivaeConfig model;
    TrainConfig train;
};

// Cartesian product in axis order, last axis fastest.
inline std::vector<GridCell> enumerate_grid(const GridSpec& grid, const model::MivaeConfig& base_model,
                                            const TrainConfig& base_train) {
    grid.validate();
    std::vector<GridCell> cells;
    for (auto layers : grid.hidden_layers)
        for (auto units : grid.hidden_units)
            for (auto latent : grid.latent_dims)
                for (auto alpha : grid.alphas)
                    for (auto lr : grid.learning_rates)
                        for (auto wd : grid.weight_decays) {
                            GridCell c{base_model, base_train};
                            c.model.hidden_layers = layers;
                            c.model.hidden_units = units;
                            c.model.bag_latent_dim = latent;
                            c.model.instance_latent_dim = latent;
                            c.model.alpha = alpha;
                            c.train.learning_rate = lr;
                            c.train.weight_decay = wd;
                            cells.push_back(c);
                        }
    return cells;
}

struct GridRow {
    std::size_t index = 0;
    GridCell cell;
    bool completed = false;
    std::string error;
    std::size_t best_epoch = 0;
    double validation_loss = 0;
    double validation_accuracy = 0;
};

struct GridResult {
    std::vector<GridRow> rows;  // enumeration order
    std::size_t best = 0;       // index into rows
};

// True if a ranks ahead of b: lower validation loss, then higher accuracy,
// then earlier enumeration index.
inline bool ranks_before(const GridRow& a, const GridRow& b) {
    if (a.completed != b.completed) return a.completed;
    if (a.validation_loss != b.validation_loss) return a.validation_loss < b.validation_loss;
    if (a.validation_accuracy != b.validation_accuracy) return a.validation_accuracy > b.validation_accuracy;
    return a.index < b.index;
}

// Every cell trains on the same stratified split of the dev set and the same seed.
inline GridResult grid_search(const data::MilDataset& dev, const GridSpec& grid, const model::MivaeConfig& base_model,
                              const TrainConfig& base_train, double validation_fraction = 0.1, std::size_t jobs = 1) {
    const auto cells = enumerate_grid(grid, base_model, base_train);
    const auto hold = data::stratified_holdout(data::labelled_ids(dev), validation_fraction,
                                               derive_seed(base_train.seed, "grid-validation"));
    std::vector<data::MilDataset> others{data::select_bags(dev, hold.holdout, dev.name + "/validation")};
    const auto splits = data::standardize(data::select_bags(dev, hold.train, dev.name + "/train"), others);

    GridResult result;
    result.rows.resize(cells.size());
    const auto errors = run_tasks(cells.size(), jobs, [&](std::size_t i) {
        GridRow row;
        row.index = i;
        row.cell = cells[i];
        try {
            const TrainResult t = train(splits.train, splits.others[0], cells[i].model, cells[i].train);
            row.best_epoch = t.best_epoch;
            row.validation_loss = t.log[t.best_epoch - 1].validation_loss;
            row.validation_accuracy = t.log[t.best_epoch - 1].validation_accuracy;
            row.completed = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        result.rows[i] = std::move(row);
    });
    (void)errors;
    for (std::size_t i = 1; i < result.rows.size(); ++i) {
        if (ranks_before(result.rows[i], result.rows[result.best])) result.best = i;
    }
    if (!result.rows[result.best].completed) throw NumericError("grid: every cell failed; first error: " + result.rows[0].error);
    return result;
}

} // namespace mivae::harness

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mivae/data/folds.hpp"
#include "mivae/data/standardize.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/metrics.hpp"
#include "mivae/harness/train.hpp"
#include "mivae/harness/work_pool.hpp"

namespace mivae::harness {

struct CellResult {
    std::size_t repeat = 0;
    std::size_t fold = 0;
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;
    double accuracy = 0;
    std::optional<double> aucpr;
    std::size_t selected_epoch = 0;
    double validation_loss = 0;
    std::size_t test_bags = 0;
};

// Mean with two spreads: population std over all cells, and population std
// of the per-repeat means.
struct MetricSummary {
    std::size_t count = 0;
    double mean = 0;
    double std_cells = 0;
    double std_repeat_means = 0;
};

inline double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

inline std::optional<MetricSummary> summarize(const std::vector<CellResult>& cells,
                                              const std::function<std::optional<double>(const CellResult&)>& metric) {
    std::vector<double> values;
    std::map<std::size_t, std::vector<double>> by_repeat;
    for (const auto& c : cells) {
        if (!c.completed) continue;
        if (auto v = metric(c)) {
            values.push_back(*v);
            by_repeat[c.repeat].push_back(*v);
        }
    }
    if (values.empty()) return std::nullopt;
    MetricSummary s;
    s.count = values.size();
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    s.std_cells = population_std(values);
    std::vector<double> repeat_means;
    for (const auto& [r, v] : by_repeat) {
        double m = 0;
        for (double x : v) m += x;
        repeat_means.push_back(m / static_cast<double>(v.size()));
    }
    s.std_repeat_means = population_std(repeat_means);
    return s;
}

struct CVResult {
    data::FoldPlan plan;
    std::vector<CellResult> cells;  // repeat-major
    std::optional<MetricSummary> accuracy;
    std::optional<MetricSummary> aucpr;
    bool failed = false;
};

struct CvOptions {
    std::size_t jobs = 1;
    double validation_fraction = 0.1;  // of each cell's training bags
    std::function<void(const CellResult&)> on_cell;  // called serially as cells finish
    std::function<void(const CellResult&, const EpochLog&)> on_epoch;
};

inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t repeat, std::size_t fold) {
    return derive_seed(seed, "cell", repeat, fold);
}

inline void recompute_summaries(CVResult& result) {
    result.accuracy = summarize(result.cells, [](const CellResult& c) { return std::optional<double>(c.accuracy); });
    result.aucpr = summarize(result.cells, [](const CellResult& c) { return c.aucpr; });
    result.failed = std::any_of(result.cells.begin(), result.cells.end(), [](const CellResult& c) { return !c.completed; });
}

// Standardizes with training statistics, trains, and scores the test fold.
inline CellResult run_cell(const data::MilDataset& ds, const data::FoldSplit& split, const model::MivaeConfig& model_config,
                           TrainConfig config, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    CellResult cell;
    cell.seed = config.seed;
    const data::MilDataset train_raw = data::select_bags(ds, split.train, ds.name + "/train");
    std::vector<data::MilDataset> others{data::select_bags(ds, split.validation, ds.name + "/validation"),
                                         data::select_bags(ds, split.test, ds.name + "/test")};
    const auto splits = data::standardize(train_raw, others);
    const TrainResult trained = train(splits.train, splits.others[0], model_config, config, {on_epoch});
    const data::MilDataset& test = splits.others[1];
    cell.accuracy = evaluate_bag_accuracy(trained.best, test);
    if (test.has_instance_labels()) {
        bool any_positive = false;
        for (const auto& b : test.bags) {
            any_positive |= std::find(b.instance_labels->begin(), b.instance_labels->end(), 1) != b.instance_labels->end();
        }
        if (any_positive) cell.aucpr = evaluate_instance_aucpr(trained.best, test);
    }
    cell.selected_epoch = trained.best_epoch;
    cell.validation_loss = trained.log[trained.best_epoch - 1].validation_loss;
    cell.test_bags = test.size();
    cell.completed = true;
    return cell;
}

inline CVResult run_repeated_cv(const data::MilDataset& ds, const model::MivaeConfig& model_config,
                                const TrainConfig& config, std::size_t folds = 10, std::size_t repeats = 10,
                                const CvOptions& options = {}) {
    config.validate();
    model_config.validate();
    CVResult result;
    result.plan = data::make_fold_plan(ds, folds, repeats, config.seed, options.validation_fraction);
    result.cells.resize(repeats * folds);
    for (std::size_t r = 0; r < repeats; ++r) {
        for (std::size_t k = 0; k < folds; ++k) {
            auto& c = result.cells[r * folds + k];
            c.repeat = r;
            c.fold = k;
            c.seed = cell_seed(config.seed, r, k);
        }
    }

    std::mutex report;
    const auto errors = run_tasks(result.cells.size(), options.jobs, [&](std::size_t i) {
        CellResult& slot = result.cells[i];
        TrainConfig cell_config = config;
        cell_config.seed = slot.seed;
        std::function<void(const EpochLog&)> on_epoch;
        if (options.on_epoch) {
            on_epoch = [&, i](const EpochLog& e) {
                std::lock_guard lock(report);
                options.on_epoch(result.cells[i], e);
            };
        }
        CellResult done;
        try {
            done = run_cell(ds, result.plan.split(slot.repeat, slot.fold), model_config, cell_config, on_epoch);
        } catch (const std::exception& e) {
            done.error = e.what();
        }
        std::lock_guard lock(report);
        done.repeat = slot.repeat;
        done.fold = slot.fold;
        done.seed = slot.seed;
        slot = std::move(done);
        if (options.on_cell) options.on_cell(slot);
    });
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i] && result.cells[i].error.empty()) result.cells[i].error = "cell failed with a non-standard exception";
    }
    recompute_summaries(result);
    return result;
}

} // namespace mivae::harness

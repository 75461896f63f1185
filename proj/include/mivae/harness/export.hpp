#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mivae/data/bag_csv.hpp"
#include "mivae/diffcore/rng.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/cv.hpp"
#include "mivae/harness/train.hpp"
#include "mivae/model/checkpoint.hpp"
#include "mivae/model/mivae.hpp"

namespace mivae::harness {

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw Error("failed writing " + path.string());
}

} // namespace detail

struct InstanceScore {
    std::string bag_id;
    std::size_t instance_index = 0;
    double score = 0;
    std::optional<int> label;
};

// One row per instance: bag_id,instance_index,score,label (label empty when unknown).
inline void export_instance_scores(const model::MivaeParams& m, const data::MilDataset& ds, std::ostream& out) {
    out << "bag_id,instance_index,score,label\n";
    for (const auto& b : ds.bags) {
        const auto scores = model::predict_instances(m, b.instances);
        for (std::size_t j = 0; j < scores.size(); ++j) {
            out << b.id << ',' << j << ',' << data::detail::format_double(scores[j]) << ',';
            if (b.instance_labels) out << (*b.instance_labels)[j];
            out << '\n';
        }
    }
}

inline void export_instance_scores(const model::MivaeParams& m, const data::MilDataset& ds,
                                   const std::filesystem::path& path) {
    auto out = detail::open_output(path);
    export_instance_scores(m, ds, out);
    detail::finish_output(out, path);
}

inline std::vector<InstanceScore> read_instance_scores(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    if (!std::getline(in, line) || data::detail::trim(line) != "bag_id,instance_index,score,label") {
        throw ParseError(source, 1, "expected header bag_id,instance_index,score,label");
    }
    std::vector<InstanceScore> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (data::detail::trim(line).empty()) continue;
        const auto f = data::detail::split_commas(line);
        if (f.size() != 4) throw ParseError(source, line_no, "expected 4 fields");
        InstanceScore row;
        row.bag_id = std::string(data::detail::trim(f[0]));
        double idx = 0, label = 0;
        if (!data::detail::parse_double(f[1], idx) || !data::detail::parse_double(f[2], row.score)) {
            throw ParseError(source, line_no, "non-numeric index or score");
        }
        row.instance_index = static_cast<std::size_t>(idx);
        if (!data::detail::trim(f[3]).empty()) {
            if (!data::detail::parse_double(f[3], label)) throw ParseError(source, line_no, "bad label");
            row.label = static_cast<int>(label);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Per-bag probabilities: bag_id,probability,label.
inline void export_bag_predictions(const model::MivaeParams& m, const data::MilDataset& ds, std::ostream& out) {
    out << "bag_id,probability,label\n";
    for (const auto& b : ds.bags) {
        out << b.id << ',' << data::detail::format_double(model::predict_bag(m, b.instances)) << ',' << b.label << '\n';
    }
}

inline void write_epoch_log(const std::vector<EpochLog>& log, std::ostream& out) {
    out << "epoch,train_loss,validation_loss,validation_accuracy,seconds\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << data::detail::format_double(e.train_loss) << ','
            << data::detail::format_double(e.validation_loss) << ','
            << data::detail::format_double(e.validation_accuracy) << ',' << data::detail::format_double(e.seconds)
            << '\n';
    }
}

// FNV-1a of the canonical JSON text, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(mivae::detail::fnv1a(config.dump())));
    return buf;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_bags", c.batch_bags},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed}};
}

inline nlohmann::json summary_to_json(const std::optional<MetricSummary>& s) {
    if (!s) return nullptr;
    return {{"count", s->count}, {"mean", s->mean}, {"std_cells", s->std_cells}, {"std_repeat_means", s->std_repeat_means}};
}

inline nlohmann::json cell_to_json(const CellResult& c) {
    nlohmann::json j{{"repeat", c.repeat}, {"fold", c.fold}, {"seed", c.seed}, {"completed", c.completed}};
    if (c.completed) {
        j["accuracy"] = c.accuracy;
        j["aucpr"] = c.aucpr ? nlohmann::json(*c.aucpr) : nlohmann::json(nullptr);
        j["selected_epoch"] = c.selected_epoch;
        j["validation_loss"] = c.validation_loss;
        j["test_bags"] = c.test_bags;
    } else {
        j["error"] = c.error;
    }
    return j;
}

// Results file: configs with their hash, one record per cell, and the summary.
inline nlohmann::json cv_results_to_json(const model::MivaeConfig& model_config, const TrainConfig& train_config,
                                         std::size_t folds, std::size_t repeats, const CVResult& r) {
    nlohmann::json config{{"model", model::config_to_json(model_config)},
                          {"train", train_config_to_json(train_config)},
                          {"folds", folds},
                          {"repeats", repeats}};
    nlohmann::json j{{"config", config}, {"config_hash", config_hash(config)}, {"failed", r.failed}};
    auto& cells = j["cells"] = nlohmann::json::array();
    for (const auto& c : r.cells) cells.push_back(cell_to_json(c));
    j["summary"] = {{"accuracy", summary_to_json(r.accuracy)}, {"aucpr", summary_to_json(r.aucpr)}};
    return j;
}

} // namespace mivae::harness

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mivae/cli/config_files.hpp"
#include "mivae/cli/manifest.hpp"
#include "mivae/data/bag_csv.hpp"
#include "mivae/data/folds.hpp"
#include "mivae/data/standardize.hpp"
#include "mivae/data/synthetic.hpp"
#include "mivae/errors.hpp"
#include "mivae/harness/cv.hpp"
#include "mivae/harness/export.hpp"
#include "mivae/harness/grid.hpp"
#include "mivae/harness/metrics.hpp"
#include "mivae/harness/train.hpp"
#include "mivae/model/checkpoint.hpp"

namespace mivae::cli {

namespace fs = std::filesystem;

enum ExitCode : int { exit_ok = 0, exit_other = 1, exit_config = 2, exit_data = 3, exit_numeric = 4 };

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DimensionError*>(&e)) return exit_config;
    if (dynamic_cast<const ConfigError*>(&e)) return exit_config;
    if (dynamic_cast<const DataError*>(&e)) return exit_data;
    if (dynamic_cast<const NumericError*>(&e)) return exit_numeric;
    return exit_other;
}

// Summary goes to `out`, progress and diagnostics to `log`.
struct Streams {
    std::ostream& out;
    std::ostream& log;
};

namespace detail {

inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

inline void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline void make_parent(const fs::path& file) {
    if (file.has_parent_path()) make_dir(file.parent_path());
}

inline data::MilDataset load_data(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("dataset file '" + path.string() + "' does not exist");
    return data::load_bag_csv(path);
}

template <class F>
void write_file(const fs::path& path, F&& body) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    body(out);
    out.flush();
    if (!out) throw Error("failed writing " + path.string());
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

} // namespace detail

// ---- synth

struct SynthRequest {
    SynthConfig spec;
    std::optional<std::string> spec_path;
    std::uint64_t seed = 0;
    fs::path out;  // bag CSV
};

inline void run_synth(const SynthRequest& req, const Streams& io) {
    const data::SyntheticSpec spec = resolve_synth(req.spec, req.seed);
    RunManifest m{"synth", req.spec_path, synth_to_json(spec), req.seed, req.out.string()};
    detail::make_parent(req.out);
    write_manifest(m, manifest_path_for_file(req.out));
    const data::MilDataset ds = data::sample_synthetic(spec, req.seed);
    data::write_bag_csv(ds, req.out);
    io.out << "synth: " << ds.size() << " bags (" << ds.positive_bags() << " positive), " << ds.instance_count()
           << " instances, d=" << ds.feature_dim << " -> " << req.out.string() << '\n';
}

// ---- train

struct TrainRequest {
    fs::path data;
    ExperimentConfig config;
    std::optional<std::string> config_path;
    fs::path out;  // directory
};

struct TrainOutcome {
    std::size_t best_epoch = 0;
    double final_validation_loss = 0;
    double best_validation_loss = 0;
    double best_validation_accuracy = 0;
};

inline TrainOutcome run_train(TrainRequest req, const Streams& io) {
    const data::MilDataset ds = detail::load_data(req.data);
    bind_input_dim(req.config, ds.feature_dim);
    const auto& tc = req.config.train;

    RunManifest m{"train", req.config_path, experiment_to_json(req.config), tc.seed, req.out.string()};
    add_input(m, "data", req.data);
    detail::make_dir(req.out);
    write_manifest(m, manifest_path_for_dir(req.out));

    const auto hold = data::stratified_holdout(data::labelled_ids(ds), req.config.validation_fraction,
                                               derive_seed(tc.seed, "train-validation"));
    std::vector<data::MilDataset> others{data::select_bags(ds, hold.holdout, ds.name + "/validation")};
    const auto splits = data::standardize(data::select_bags(ds, hold.train, ds.name + "/train"), others);

    harness::TrainHooks hooks;
    hooks.on_epoch = [&](const harness::EpochLog& e) {
        io.log << "epoch " << e.epoch << '/' << tc.epochs << " train " << detail::fixed(e.train_loss) << " validation "
               << detail::fixed(e.validation_loss) << " acc " << detail::fixed(e.validation_accuracy, 3) << '\n';
    };
    const harness::TrainResult r = harness::train(splits.train, splits.others[0], req.config.model, tc, hooks);

    model::Checkpoint ck{r.best, r.optimizer, r.rng_state, splits.scaler};
    model::save_checkpoint(ck, req.out / "checkpoint.json");
    detail::write_file(req.out / "epoch_log.csv", [&](std::ostream& o) { harness::write_epoch_log(r.log, o); });

    TrainOutcome o;
    o.best_epoch = r.best_epoch;
    o.final_validation_loss = r.log.back().validation_loss;
    o.best_validation_loss = r.log[r.best_epoch - 1].validation_loss;
    o.best_validation_accuracy = r.log[r.best_epoch - 1].validation_accuracy;
    detail::require_finite(o.final_validation_loss, "final validation loss");
    io.out << "train: best epoch " << o.best_epoch << '/' << tc.epochs << ", validation loss "
           << detail::fixed(o.best_validation_loss) << ", validation accuracy "
           << detail::fixed(o.best_validation_accuracy, 3) << '\n';
    return o;
}

// ---- cv

struct CvRequest {
    fs::path data;
    ExperimentConfig config;
    std::optional<std::string> config_path;
    std::size_t folds = 10;
    std::size_t repeats = 10;
    std::size_t jobs = 1;
    fs::path out;
};

inline std::string summary_line(const std::string& name, const harness::MetricSummary& s) {
    return name + " " + detail::fixed(s.mean) + " ± " + detail::fixed(s.std_cells) + " (std over " +
           std::to_string(s.count) + " cells; std of repeat means " + detail::fixed(s.std_repeat_means) + ")";
}

inline harness::CVResult run_cv(CvRequest req, const Streams& io) {
    const data::MilDataset ds = detail::load_data(req.data);
    bind_input_dim(req.config, ds.feature_dim);
    const auto& tc = req.config.train;

    RunManifest m{"cv", req.config_path, experiment_to_json(req.config), tc.seed, req.out.string()};
    add_input(m, "data", req.data);
    m.options = {{"folds", req.folds}, {"repeats", req.repeats}, {"jobs", req.jobs}};
    detail::make_dir(req.out);
    write_manifest(m, manifest_path_for_dir(req.out));

    harness::CvOptions options;
    options.jobs = req.jobs;
    options.validation_fraction = req.config.validation_fraction;
    std::size_t done = 0;
    options.on_cell = [&](const harness::CellResult& c) {
        ++done;
        io.log << "cell " << done << '/' << req.folds * req.repeats << " (repeat " << c.repeat << ", fold " << c.fold
               << "): ";
        if (c.completed) {
            io.log << "accuracy " << detail::fixed(c.accuracy, 3);
            if (c.aucpr) io.log << ", aucpr " << detail::fixed(*c.aucpr, 3);
            io.log << ", epoch " << c.selected_epoch << '\n';
        } else {
            io.log << "FAILED: " << c.error << '\n';
        }
    };
    const harness::CVResult r = harness::run_repeated_cv(ds, req.config.model, tc, req.folds, req.repeats, options);

    detail::write_file(req.out / "results.json", [&](std::ostream& o) {
        o << harness::cv_results_to_json(req.config.model, tc, req.folds, req.repeats, r).dump(2) << '\n';
    });
    detail::write_file(req.out / "fold_plan.csv", [&](std::ostream& o) { data::write_fold_plan(r.plan, o); });

    if (r.accuracy) io.out << summary_line("accuracy", *r.accuracy) << '\n';
    if (r.aucpr) io.out << summary_line("aucpr", *r.aucpr) << '\n';
    if (r.failed) {
        std::size_t failed = 0;
        for (const auto& c : r.cells) failed += !c.completed;
        throw NumericError("cv: " + std::to_string(failed) + " of " + std::to_string(r.cells.size()) +
                           " cells failed; see results.json");
    }
    return r;
}

// ---- gridsearch

struct GridRequest {
    fs::path data;
    GridConfig grid;
    std::optional<std::string> grid_path;
    std::size_t jobs = 1;
    fs::path out;
};

inline harness::GridResult run_gridsearch(GridRequest req, const Streams& io) {
    const data::MilDataset ds = detail::load_data(req.data);
    bind_input_dim(req.grid.base, ds.feature_dim);

    RunManifest m{"gridsearch", req.grid_path, grid_to_json(req.grid), req.grid.base.train.seed, req.out.string()};
    add_input(m, "data", req.data);
    m.options = {{"jobs", req.jobs}};
    detail::make_dir(req.out);
    write_manifest(m, manifest_path_for_dir(req.out));

    io.log << "grid: " << req.grid.grid.size() << " cells\n";
    const harness::GridResult r = harness::grid_search(ds, req.grid.grid, req.grid.base.model, req.grid.base.train,
                                                       req.grid.base.validation_fraction, req.jobs);

    detail::write_file(req.out / "grid.csv", [&](std::ostream& o) {
        o << "index,hidden_layers,hidden_units,latent_dim,alpha,learning_rate,weight_decay,completed,best_epoch,"
             "validation_loss,validation_accuracy,error\n";
        for (const auto& row : r.rows) {
            const auto& c = row.cell;
            o << row.index << ',' << c.model.hidden_layers << ',' << c.model.hidden_units << ','
              << c.model.bag_latent_dim << ',' << data::detail::format_double(c.model.alpha) << ','
              << data::detail::format_double(c.train.learning_rate) << ','
              << data::detail::format_double(c.train.weight_decay) << ',' << (row.completed ? 1 : 0) << ',';
            if (row.completed) {
                o << row.best_epoch << ',' << data::detail::format_double(row.validation_loss) << ','
                  << data::detail::format_double(row.validation_accuracy) << ',';
            } else {
                std::string err = row.error;
                for (char& ch : err) {
                    if (ch == ',' || ch == '\n') ch = ' ';
                }
                o << ",,," << err;
            }
            o << '\n';
        }
    });
    const auto& best = r.rows[r.best];
    ExperimentConfig chosen = req.grid.base;
    chosen.model = best.cell.model;
    chosen.train = best.cell.train;
    chosen.model.input_dim = 0;  // rebinds to whatever data the config is used with
    detail::write_file(req.out / "best_config.json",
                       [&](std::ostream& o) { o << experiment_to_json(chosen).dump(2) << '\n'; });

    io.out << "gridsearch: best cell " << best.index << " of " << r.rows.size() << ": layers "
           << best.cell.model.hidden_layers << ", units " << best.cell.model.hidden_units << ", latent "
           << best.cell.model.bag_latent_dim << ", alpha " << best.cell.model.alpha << ", lr "
           << best.cell.train.learning_rate << ", wd " << best.cell.train.weight_decay << "; validation loss "
           << detail::fixed(best.validation_loss) << ", accuracy " << detail::fixed(best.validation_accuracy, 3)
           << '\n';
    std::size_t failed = 0;
    for (const auto& row : r.rows) failed += !row.completed;
    if (failed > 0) {
        throw NumericError("gridsearch: " + std::to_string(failed) + " of " + std::to_string(r.rows.size()) +
                           " cells failed; see grid.csv");
    }
    return r;
}

// ---- predict

struct PredictRequest {
    fs::path checkpoint;
    fs::path data;
    fs::path out;  // instance scores; bag probabilities go to <stem>.bags.csv beside it
};

inline fs::path bag_predictions_path(const fs::path& out) {
    fs::path p = out;
    p.replace_extension();
    return p.string() + ".bags.csv";
}

inline void run_predict(const PredictRequest& req, const Streams& io) {
    if (!fs::exists(req.checkpoint)) throw DataError("checkpoint '" + req.checkpoint.string() + "' does not exist");
    const model::Checkpoint ck = model::load_checkpoint(req.checkpoint);
    data::MilDataset ds = detail::load_data(req.data);
    model::require_input_dim(ck.model.config, ds.feature_dim);

    RunManifest m{"predict", std::nullopt, model::config_to_json(ck.model.config), 0, req.out.string()};
    add_input(m, "checkpoint", req.checkpoint);
    add_input(m, "data", req.data);
    detail::make_parent(req.out);
    write_manifest(m, manifest_path_for_file(req.out));

    if (ck.scaler) ds = ck.scaler->transform(ds);
    harness::export_instance_scores(ck.model, ds, req.out);
    detail::write_file(bag_predictions_path(req.out),
                       [&](std::ostream& o) { harness::export_bag_predictions(ck.model, ds, o); });
    io.out << "predict: " << ds.size() << " bags, " << ds.instance_count() << " instances -> " << req.out.string()
           << ", " << bag_predictions_path(req.out).string() << '\n';
}

// ---- replay

inline fs::path default_replay_out(const RunManifest& m) {
    const fs::path orig = m.out;
    if (m.command == "synth" || m.command == "predict") {
        fs::path p = orig;
        p.replace_extension();
        return p.string() + ".replay" + orig.extension().string();
    }
    return orig / "replay";
}

inline fs::path checked_input(const RunManifest& m, const std::string& name) {
    if (!m.inputs.contains(name)) throw ConfigError("manifest: missing input '" + name + "'");
    const fs::path path = m.inputs.at(name).at("path").get<std::string>();
    const std::string expected = m.inputs.at(name).at("fnv1a").get<std::string>();
    if (file_fingerprint(path) != expected) {
        throw DataError("replay: input '" + path.string() + "' changed since the run (fingerprint differs)");
    }
    return path;
}

// Re-runs a manifest from its resolved config into `out` (default beside the original).
inline void run_replay(const fs::path& manifest_path, const std::optional<fs::path>& out, const Streams& io) {
    const RunManifest m = read_manifest(manifest_path);
    const fs::path target = out ? *out : default_replay_out(m);
    io.log << "replaying " << m.command << " into " << target.string() << '\n';
    if (m.command == "synth") {
        run_synth({synth_from_json(m.config, "manifest.config"), m.config_path, m.seed, target}, io);
    } else if (m.command == "train") {
        run_train({checked_input(m, "data"), experiment_from_json(m.config, "manifest.config"), m.config_path, target},
                  io);
    } else if (m.command == "cv") {
        run_cv({checked_input(m, "data"), experiment_from_json(m.config, "manifest.config"), m.config_path,
                m.options.at("folds").get<std::size_t>(), m.options.at("repeats").get<std::size_t>(),
                m.options.at("jobs").get<std::size_t>(), target},
               io);
    } else if (m.command == "gridsearch") {
        run_gridsearch({checked_input(m, "data"), grid_from_json(m.config, "manifest.config"), m.config_path,
                        m.options.at("jobs").get<std::size_t>(), target},
                       io);
    } else if (m.command == "predict") {
        run_predict({checked_input(m, "checkpoint"), checked_input(m, "data"), target}, io);
    } else {
        throw ConfigError("manifest: unknown command '" + m.command + "'");
    }
}

} // namespace mivae::cli

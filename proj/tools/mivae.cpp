#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mivae/cli/commands.hpp"

using namespace mivae;
using namespace mivae::cli;

namespace {

// flag > environment > default
std::filesystem::path out_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MIVAE_OUT_DIR"); env && *env) return env;
    return "mivae_out";
}

std::filesystem::path out_file(const std::string& flag, const char* default_name) {
    if (!flag.empty()) return flag;
    return out_dir("") / default_name;
}

std::size_t jobs(std::size_t flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("MIVAE_JOBS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError("MIVAE_JOBS must be a positive integer, got '" + std::string(env) + "'");
        return static_cast<std::size_t>(v);
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-instance variational auto-encoder: synthetic data, training, cross validation, grid search "
                 "and prediction."};
    app.require_subcommand(1);

    std::string spec_path, data_path, config_path, grid_path, checkpoint_path, manifest_path, out;
    std::uint64_t seed = 0;
    std::size_t folds = 10, repeats = 10, jobs_flag = 0;

    auto* synth = app.add_subcommand("synth", "sample a synthetic bag CSV with instance labels");
    synth->add_option("--spec", spec_path, "synthetic spec (JSON)")->required();
    synth->add_option("--seed", seed, "sampling seed")->required();
    synth->add_option("--out", out, "output CSV");

    auto* train = app.add_subcommand("train", "train one model with a stratified validation holdout");
    train->add_option("--data", data_path, "bag CSV")->required();
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--out", out, "output directory");

    auto* cv = app.add_subcommand("cv", "repeated stratified k-fold cross validation");
    cv->add_option("--data", data_path, "bag CSV")->required();
    cv->add_option("--config", config_path, "experiment config (JSON)")->required();
    cv->add_option("--repeats", repeats, "repeats")->capture_default_str();
    cv->add_option("--folds", folds, "folds")->capture_default_str();
    cv->add_option("--jobs", jobs_flag, "concurrent cells (default MIVAE_JOBS or 1)");
    cv->add_option("--out", out, "output directory");

    auto* grid = app.add_subcommand("gridsearch", "grid search on one stratified validation holdout");
    grid->add_option("--data", data_path, "bag CSV")->required();
    grid->add_option("--grid", grid_path, "grid file (JSON)")->required();
    grid->add_option("--jobs", jobs_flag, "concurrent cells (default MIVAE_JOBS or 1)");
    grid->add_option("--out", out, "output directory");

    auto* predict = app.add_subcommand("predict", "bag probabilities and instance scores from a checkpoint");
    predict->add_option("--checkpoint", checkpoint_path, "checkpoint.json from train")->required();
    predict->add_option("--data", data_path, "bag CSV")->required();
    predict->add_option("--out", out, "instance score CSV; bag probabilities go to <stem>.bags.csv");

    auto* replay = app.add_subcommand("replay", "re-run a manifest written by any other command");
    replay->add_option("--manifest", manifest_path, "manifest.json")->required();
    replay->add_option("--out", out, "output location (default: beside the original run)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    const Streams io{std::cout, std::cerr};
    try {
        if (*synth) {
            run_synth({load_synth(spec_path), spec_path, seed, out_file(out, "synthetic.csv")}, io);
        } else if (*train) {
            run_train({data_path, load_experiment(config_path), config_path, out_dir(out)}, io);
        } else if (*cv) {
            run_cv({data_path, load_experiment(config_path), config_path, folds, repeats, jobs(jobs_flag), out_dir(out)},
                   io);
        } else if (*grid) {
            run_gridsearch({data_path, load_grid(grid_path), grid_path, jobs(jobs_flag), out_dir(out)}, io);
        } else if (*predict) {
            run_predict({checkpoint_path, data_path, out_file(out, "predictions.csv")}, io);
        } else if (*replay) {
            run_replay(manifest_path, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out), io);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return exit_ok;
}

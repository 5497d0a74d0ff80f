// qdrun: run quality-diversity experiments from presets or YAML configs.
//
//   qdrun run <config|preset> [--trials T] [--seed S] [--iterations N] [--out DIR] [--workers P]
//   qdrun list-presets
//   qdrun show-preset <name>
//   qdrun export-discount-grid <snapshot> --resolution R [--lower a b] [--upper a b] [--out FILE]
//
// Exit codes: 0 success, 1 trial or runtime failure, 2 configuration or usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "qd/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quality-diversity experiment runner"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run every trial of an experiment");
    std::string target;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<long> iterations;
    std::optional<std::string> out_dir;
    std::optional<int> workers;
    std::optional<long> log_every;
    bool save_model = false, save_solutions = false, quiet = false;
    run->add_option("config", target, "Preset name or YAML config path")->required();
    run->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "Base seed; trial i uses seed + i");
    run->add_option("--iterations", iterations, "Iterations per trial")->check(CLI::PositiveNumber);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--workers", workers, "Trials run in parallel")->check(CLI::PositiveNumber);
    run->add_option("--log-every", log_every, "Write every n-th iteration to the CSV log")->check(CLI::PositiveNumber);
    run->add_flag("--save-model", save_model, "Write discount-model snapshots (DMS)");
    run->add_flag("--save-solutions", save_solutions, "Include solutions in archive.csv");
    run->add_flag("--quiet", quiet, "No per-trial progress lines");

    auto* list = app.add_subcommand("list-presets", "Print all bundled presets");

    auto* show = app.add_subcommand("show-preset", "Print a preset as YAML");
    std::string show_name;
    show->add_option("name", show_name, "Preset name")->required();

    auto* grid = app.add_subcommand("export-discount-grid", "Evaluate a 2-measure discount model on a grid");
    std::string snapshot_path;
    int resolution = 200;
    std::vector<double> lower, upper;
    std::optional<std::string> grid_out;
    grid->add_option("snapshot", snapshot_path, "Model snapshot (model.bin)")->required();
    grid->add_option("--resolution", resolution, "Cells per axis")->check(CLI::PositiveNumber);
    grid->add_option("--lower", lower, "Lower grid bounds")->expected(2);
    grid->add_option("--upper", upper, "Upper grid bounds")->expected(2);
    grid->add_option("--out", grid_out, "CSV path (stdout by default)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*list) {
            for (const auto& name : qd::list_presets())
                std::cout << name << '\n';
            return kOk;
        }
        if (*show) {
            const auto preset = qd::find_preset(show_name);
            if (!preset)
                throw qd::ConfigError("unknown preset '" + show_name + "'");
            std::cout << qd::to_yaml(*preset);
            return kOk;
        }
        if (*grid) {
            const qd::ModelSnapshot snap = qd::read_snapshot(snapshot_path);
            std::optional<qd::Vec> lo, hi;
            if (!lower.empty())
                lo = Eigen::Map<const qd::Vec>(lower.data(), 2);
            if (!upper.empty())
                hi = Eigen::Map<const qd::Vec>(upper.data(), 2);
            if (grid_out) {
                std::ofstream f(*grid_out);
                if (!f)
                    throw qd::IoError("cannot write " + *grid_out);
                qd::export_discount_grid(snap, resolution, f, lo, hi);
            } else {
                qd::export_discount_grid(snap, resolution, std::cout, lo, hi);
            }
            return kOk;
        }

        qd::ExperimentConfig cfg = qd::resolve_config(target);
        if (trials)
            cfg.trials = *trials;
        if (seed)
            cfg.seed = *seed;
        if (iterations)
            cfg.algo.iterations = *iterations;
        if (out_dir)
            cfg.output = *out_dir;
        if (workers)
            cfg.workers = *workers;
        if (log_every)
            cfg.log_every = *log_every;
        if (save_model)
            cfg.save_model = true;
        if (save_solutions)
            cfg.save_solutions = true;
        qd::validate(cfg);
        std::function<void(const std::string&)> progress;
        if (!quiet)
            progress = [](const std::string& line) { std::cerr << line << '\n'; };
        const qd::ExperimentResult res = qd::run_experiment(cfg, progress);
        std::cout << res.output.string() << '\n';
        return res.all_ok() ? kOk : kFailure;
    } catch (const qd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const qd::CliError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}

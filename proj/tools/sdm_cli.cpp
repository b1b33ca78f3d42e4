// Command-line front end: generate | train | eval | sweep.
// Precedence for every setting is flag > config file > built-in default.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sdm/commands.hpp"

namespace {

struct Flags {
    std::optional<std::string> config, out, data, checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<int> jobs;
    bool baseline = false;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run configuration file");
    cmd->add_option("--seed", f.seed, "root RNG seed; every stream derives from it");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--jobs", f.jobs, "worker threads for independent simulations");
    cmd->add_option("--threshold", f.threshold, "decision threshold for metrics");
    cmd->add_flag("--baseline", f.baseline, "also score the distance-center baseline");
}

sdm::RunConfig resolve(const Flags& f) {
    sdm::RunConfig c = f.config ? sdm::load_run_config(*f.config) : sdm::RunConfig{};
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.out = *f.out;
    if (f.data) c.data = *f.data;
    if (f.checkpoint) c.checkpoint = *f.checkpoint;
    if (f.threshold) c.threshold = *f.threshold;
    if (f.jobs) c.jobs = *f.jobs;
    if (f.baseline) c.baseline = true;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hypergraph rumor-cascade simulation and source detection toolkit"};
    app.require_subcommand(1);
    Flags flags;

    CLI::App* generate = app.add_subcommand(
        "generate", "Simulate cascades on a hypergraph and write a snapshot dataset");
    add_common(generate, flags);

    CLI::App* train = app.add_subcommand("train", "Train the detector on a generated dataset");
    add_common(train, flags);
    train->add_option("--data", flags.data, "dataset directory (from `generate`)");

    CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on the held-out test split");
    add_common(eval, flags);
    eval->add_option("--data", flags.data, "dataset directory (from `generate`)");
    eval->add_option("--ckpt", flags.checkpoint, "checkpoint file (from `train`)");

    CLI::App* sweep = app.add_subcommand(
        "sweep", "Grid over initial coverage x snapshot interval, full pipeline per cell");
    add_common(sweep, flags);

    generate->callback([&] { sdm::cmd_generate(resolve(flags)); });
    train->callback([&] { sdm::cmd_train(resolve(flags)); });
    eval->callback([&] { sdm::cmd_eval(resolve(flags)); });
    sweep->callback([&] { sdm::cmd_sweep(resolve(flags)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

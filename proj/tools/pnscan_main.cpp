#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pnscan/errors.hpp"
#include "pnscan/experiment.hpp"

namespace {

// exit codes: 0 success, 2 schema error, 3 simulation error, 4 dependency error
int run(int argc, char** argv) {
    CLI::App app{"pnscan: plug-and-secure CAN key-agreement simulator and probing-attack harness"};
    app.require_subcommand(1);

    std::string scenario;
    std::string out = "out";
    std::string advantage_csv;
    std::vector<std::string> group;
    std::vector<std::string> pair_args;
    std::vector<std::string> grid_labels;
    uint64_t seed = 0;
    bool seed_set = false;
    std::size_t trials = 0;
    bool trials_set = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--scenario", scenario, "scenario JSON file")->required();
        cmd->add_option("--out", out, "output directory");
        cmd->add_option_function<uint64_t>(
               "--seed", [&](uint64_t v) { seed = v; seed_set = true; },
               "override the experiment seed");
        cmd->add_option_function<std::size_t>(
               "--trials", [&](std::size_t v) { trials = v; trials_set = true; },
               "override the Monte Carlo repetition count");
        cmd->add_option("--pairs", pair_args,
                        "override the pair matrix, entries as primary:secondary");
    };

    auto* sim = app.add_subcommand("simulate", "run sessions, write traces and transcripts");
    add_common(sim);
    auto* atk = app.add_subcommand("attack", "run the probing attack over the pair matrix");
    add_common(atk);
    auto* eval = app.add_subcommand("evaluate", "attack under each countermeasure grid entry");
    add_common(eval);
    eval->add_option("--grid", grid_labels, "restrict the grid to these labels");
    auto* ord = app.add_subcommand("order-group", "leakage-aware group ordering from a d matrix");
    ord->add_option("--advantage", advantage_csv, "advantage matrix CSV")->required();
    ord->add_option("--group", group, "group member ids (default: all)");
    ord->add_option("--seed", seed, "seed for gateway keys and the broadcast nonce");
    ord->add_option("--out", out, "output directory");
    auto* exp = app.add_subcommand("export", "resolved scenario + steady-state level table");
    exp->add_option("--scenario", scenario, "scenario JSON file")->required();
    exp->add_option("--out", out, "output directory");

    CLI11_PARSE(app, argc, argv);

    pnscan::RunOverrides ov;
    if (seed_set) ov.seed = seed;
    if (trials_set) ov.trials = trials;
    for (const auto& p : pair_args) {
        const auto colon = p.find(':');
        if (colon == std::string::npos)
            throw pnscan::SchemaError("--pairs entries must look like primary:secondary");
        ov.pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
    }
    ov.grid_labels = grid_labels;

    if (sim->parsed()) pnscan::cmd_simulate(scenario, out, ov);
    if (atk->parsed()) pnscan::cmd_attack(scenario, out, ov);
    if (eval->parsed()) pnscan::cmd_evaluate(scenario, out, ov);
    if (ord->parsed()) pnscan::cmd_order_group(advantage_csv, group, out, seed);
    if (exp->parsed()) pnscan::cmd_export(scenario, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const pnscan::SchemaError& e) {
        std::fprintf(stderr, "schema error: %s\n", e.what());
        return 2;
    } catch (const pnscan::DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return 4;
    } catch (const pnscan::IncompleteMapError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "simulation error: %s\n", e.what());
        return 3;
    }
}

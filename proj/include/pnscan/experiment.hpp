#pragma once

#include <string>
#include <vector>

#include "pnscan/group_ordering.hpp"
#include "pnscan/scenario.hpp"

namespace pnscan {

/// Attack outcome for one node pair, aggregated over a full session.
struct PairAttackStats {
    std::string primary;
    std::string secondary;
    std::size_t frames = 0;
    std::size_t secret_bits = 0;
    std::size_t recovered = 0;
    std::size_t erasures = 0;
    std::size_t errors = 0;
    double accuracy = 0.0;     // over non-erased secret bits
    double accuracy_se = 0.0;  // binomial standard error of that rate
    double d_train = 0.5;      // oriented advantage, trained timing classifier
    double d_session = 0.5;    // oriented advantage measured on session edges
};

/// Command-line overrides applied on top of the scenario file.
struct RunOverrides {
    std::optional<uint64_t> seed;
    std::optional<std::size_t> trials;
    std::vector<std::pair<std::string, std::string>> pairs;  // empty: keep scenario
    std::vector<std::string> grid_labels;                    // empty: keep grid
};

/// Runs the timing attack over one pair's session and scores it against
/// the transcript ground truth.
PairAttackStats attack_pair(const Scenario& sc, const std::string& primary,
                            const std::string& secondary, uint64_t seed);

/// Oriented advantage from training data (single-transmitter frames).
double measure_training_advantage(const BusContext& bus, const std::string& id_i,
                                  const std::string& id_j, Feature feature, std::size_t n_bits,
                                  uint64_t seed);

/// Oriented advantage over live session edges (reflects countermeasures):
/// rising-edge offsets split by the true driver, threshold classifier.
double measure_session_advantage(const BusContext& bus, const SessionConfig& cfg,
                                 const AttackParams& attack, std::size_t n_samples, uint64_t seed);

/// Per-bit steady-voltage advantage over live session payload bits
/// (single-driver bits split by the true driver).
double measure_session_voltage_advantage(const BusContext& bus, const SessionConfig& cfg,
                                         std::size_t n_samples, uint64_t seed);

// CLI entry points. All outputs are deterministic functions of
// (scenario file, seeds); errors are reported via the exception types,
// which the CLI maps to exit codes.
void cmd_simulate(const std::string& scenario_path, const std::string& out_dir,
                  const RunOverrides& overrides = {});
void cmd_attack(const std::string& scenario_path, const std::string& out_dir,
                const RunOverrides& overrides = {});
void cmd_evaluate(const std::string& scenario_path, const std::string& out_dir,
                  const RunOverrides& overrides = {});
void cmd_order_group(const std::string& advantage_csv_path, const std::vector<std::string>& group,
                     const std::string& out_dir, uint64_t seed);
void cmd_export(const std::string& scenario_path, const std::string& out_dir);

}  // namespace pnscan

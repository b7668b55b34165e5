#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pnscan/adversary.hpp"
#include "pnscan/protocol.hpp"

namespace pnscan {

/// Declarative experiment description loaded from a versioned JSON file.
/// Every random quantity is driven by the experiment seed; there is no
/// implicit entropy anywhere, so runs regenerate bit-identically.
struct Scenario {
    int schema_version = 1;
    std::string name;

    BusContext bus;  // topology, nodes, signalling, policies
    ProtocolParams protocol;
    std::map<std::string, std::vector<uint8_t>> seeds;       // per-node PRF seeds
    std::map<std::string, std::vector<uint8_t>> fixed_bits;  // per-node fixed chunk bits

    AttackParams attack;
    std::size_t train_bits = 2000;

    uint64_t experiment_seed = 1;
    std::size_t trials = 200;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::vector<std::string> group;

    struct GridEntry {
        std::string label;
        CountermeasureSet policies;
    };
    std::vector<GridEntry> evaluate_grid;

    StreamSource stream_for(const std::string& node_id) const;
};

Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text, const std::string& origin = "<string>");

/// Fully resolved scenario (defaults filled in), echoed into reports.
std::string scenario_to_json(const Scenario& sc);

}  // namespace pnscan

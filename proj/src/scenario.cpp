#include "pnscan/scenario.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pnscan/errors.hpp"

namespace pnscan {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw SchemaError("scenario." + path + ": " + why);
}

double num_at(const json& j, const std::string& path, const std::string& key, double fallback,
              bool required = false) {
    if (!j.contains(key)) {
        if (required) fail(path + "." + key, "missing required field");
        return fallback;
    }
    if (!j.at(key).is_number()) fail(path + "." + key, "expected a number");
    return j.at(key).get<double>();
}

std::string str_at(const json& j, const std::string& path, const std::string& key,
                   const std::string& fallback = "", bool required = false) {
    if (!j.contains(key)) {
        if (required) fail(path + "." + key, "missing required field");
        return fallback;
    }
    if (!j.at(key).is_string()) fail(path + "." + key, "expected a string");
    return j.at(key).get<std::string>();
}

TransceiverProfile parse_profile(const json& j, const std::string& path) {
    TransceiverProfile p;
    p.canh_dominant_v = num_at(j, path, "canh_dominant_v", p.canh_dominant_v);
    p.canl_dominant_v = num_at(j, path, "canl_dominant_v", p.canl_dominant_v);
    p.drive_conductance_s = num_at(j, path, "drive_conductance_s", p.drive_conductance_s);
    p.load_conductance_s = num_at(j, path, "load_conductance_s", p.load_conductance_s);
    p.rise_tau_ns = num_at(j, path, "rise_tau_ns", p.rise_tau_ns);
    p.fall_tau_ns = num_at(j, path, "fall_tau_ns", p.fall_tau_ns);
    p.supply_v = num_at(j, path, "supply_v", p.supply_v);
    try {
        p.validate();
    } catch (const InvalidInputError& e) {
        fail(path, e.what());
    }
    return p;
}

CountermeasureSet parse_policies(const json& j, const std::string& path) {
    CountermeasureSet set;
    if (j.contains("jitter")) {
        const auto& cj = j.at("jitter");
        JitterPolicy p;
        p.alpha = num_at(cj, path + ".jitter", "alpha", p.alpha);
        p.budget_fraction = num_at(cj, path + ".jitter", "budget_fraction", p.budget_fraction);
        set.jitter = p;
    }
    if (j.contains("multi_transceiver")) {
        const auto& cj = j.at("multi_transceiver");
        MultiTransceiverPolicy p;
        p.count = static_cast<std::size_t>(
            num_at(cj, path + ".multi_transceiver", "count", static_cast<double>(p.count)));
        p.drive_spread = num_at(cj, path + ".multi_transceiver", "drive_spread", p.drive_spread);
        p.load_spread = num_at(cj, path + ".multi_transceiver", "load_spread", p.load_spread);
        p.tau_spread = num_at(cj, path + ".multi_transceiver", "tau_spread", p.tau_spread);
        if (p.count < 1) fail(path + ".multi_transceiver.count", "must be >= 1");
        set.multi_transceiver = p;
    }
    if (j.contains("passive")) {
        PassivePolicy p;
        p.p_isolate = num_at(j.at("passive"), path + ".passive", "p_isolate", p.p_isolate);
        if (p.p_isolate < 0.0 || p.p_isolate > 1.0)
            fail(path + ".passive.p_isolate", "must be in [0,1]");
        set.passive = p;
    }
    if (j.contains("active")) {
        const auto& cj = j.at("active");
        ActivePolicy p;
        p.p_assist = num_at(cj, path + ".active", "p_assist", p.p_assist);
        p.slots_per_bit = static_cast<unsigned>(
            num_at(cj, path + ".active", "slots_per_bit", p.slots_per_bit));
        p.start_slot =
            static_cast<unsigned>(num_at(cj, path + ".active", "start_slot", p.start_slot));
        if (p.p_assist < 0.0 || p.p_assist > 1.0) fail(path + ".active.p_assist", "must be in [0,1]");
        set.active = p;
    }
    if (j.contains("system_assist")) {
        const auto& cj = j.at("system_assist");
        SystemAssistPolicy p;
        p.p_assist = num_at(cj, path + ".system_assist", "p_assist", p.p_assist);
        p.dither_ns = num_at(cj, path + ".system_assist", "dither_ns", p.dither_ns);
        set.system_assist = p;
    }
    return set;
}

std::vector<uint8_t> parse_bitstring(const std::string& s, const std::string& path) {
    std::vector<uint8_t> bits;
    for (char c : s) {
        if (c != '0' && c != '1') fail(path, "bit strings may only contain 0 and 1");
        bits.push_back(c == '1' ? 1 : 0);
    }
    if (bits.empty()) fail(path, "empty bit string");
    return bits;
}

}  // namespace

StreamSource Scenario::stream_for(const std::string& node_id) const {
    auto fb = fixed_bits.find(node_id);
    if (fb != fixed_bits.end()) return StreamSource::from_bits(fb->second);
    auto sd = seeds.find(node_id);
    if (sd != seeds.end()) return StreamSource::from_seed(sd->second);
    throw SchemaError("scenario.protocol.seeds: no seed for node '" + node_id + "'");
}

Scenario parse_scenario(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError("scenario (" + origin + "): " + e.what());
    }

    Scenario sc;
    if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
        fail("schema_version", "missing or non-integer");
    sc.schema_version = j.at("schema_version").get<int>();
    if (sc.schema_version != 1) fail("schema_version", "unsupported version");
    sc.name = str_at(j, "", "name", origin);

    if (!j.contains("bus") || !j.at("bus").is_object()) fail("bus", "missing object");
    const auto& jb = j.at("bus");
    const double bit_rate = num_at(jb, "bus", "bit_rate_bps", 500000.0);
    if (!(bit_rate > 0.0)) fail("bus.bit_rate_bps", "must be > 0");
    sc.bus.bit_period_ns = 1e9 / bit_rate;
    sc.bus.sample_rate_hz = num_at(jb, "bus", "sample_rate_hz", 125e6);
    sc.bus.noise_sigma_v = num_at(jb, "bus", "noise_sigma_v", 0.01);
    sc.bus.logic_threshold_v = num_at(jb, "bus", "logic_threshold_v", 0.9);
    if (jb.contains("soft_resync")) {
        if (!jb.at("soft_resync").is_boolean()) fail("bus.soft_resync", "expected a boolean");
        sc.bus.soft_resync = jb.at("soft_resync").get<bool>();
    }
    sc.bus.topology.observer_position_m = num_at(jb, "bus", "observer_position_m", 0.0, true);
    sc.bus.topology.bus_length_m = num_at(jb, "bus", "bus_length_m", -1.0);
    sc.bus.topology.propagation_ns_per_m = num_at(jb, "bus", "propagation_ns_per_m", 5.0);
    sc.bus.topology.cable_resistance_ohm_per_m =
        num_at(jb, "bus", "cable_resistance_ohm_per_m", 0.05);
    if (jb.contains("termination_ohms")) {
        const auto& t = jb.at("termination_ohms");
        if (!t.is_array() || t.size() != 2) fail("bus.termination_ohms", "expected [low, high]");
        sc.bus.topology.termination_ohms = {t[0].get<double>(), t[1].get<double>()};
    }

    if (!j.contains("nodes") || !j.at("nodes").is_array() || j.at("nodes").empty())
        fail("nodes", "missing or empty array");
    std::size_t ni = 0;
    for (const auto& jn : j.at("nodes")) {
        const std::string path = "nodes[" + std::to_string(ni) + "]";
        NodeConfig n;
        n.id = str_at(jn, path, "id", "", true);
        for (const auto& other : sc.bus.nodes)
            if (other.id == n.id) fail(path + ".id", "duplicate node id");
        n.topo_index = sc.bus.topology.node_positions_m.size();
        sc.bus.topology.node_positions_m.push_back(num_at(jn, path, "position_m", 0.0, true));
        if (jn.contains("profile")) n.profile = parse_profile(jn.at("profile"), path + ".profile");
        n.processing_ns = num_at(jn, path, "processing_ns", 0.0);
        n.sync_jitter_ns = num_at(jn, path, "sync_jitter_ns", 0.0);
        n.frame_jitter_ns = num_at(jn, path, "frame_jitter_ns", 0.0);
        sc.bus.nodes.push_back(std::move(n));
        ++ni;
    }

    if (j.contains("protocol")) {
        const auto& jp = j.at("protocol");
        sc.protocol.header_id = static_cast<uint16_t>(
            num_at(jp, "protocol", "header_id", kDefaultPnsHeaderId));
        sc.protocol.chunk_bits =
            static_cast<std::size_t>(num_at(jp, "protocol", "chunk_bits", 32.0));
        sc.protocol.target_key_bits =
            static_cast<std::size_t>(num_at(jp, "protocol", "target_key_bits", 64.0));
        sc.protocol.frame_cap = static_cast<std::size_t>(num_at(jp, "protocol", "frame_cap", 64.0));
        if (jp.contains("seeds")) {
            for (const auto& [id, spec] : jp.at("seeds").items()) {
                const std::string path = "protocol.seeds." + id;
                bool known = false;
                for (const auto& n : sc.bus.nodes) known |= n.id == id;
                if (!known) fail(path, "unknown node id");
                if (spec.is_object() && spec.contains("hex")) {
                    try {
                        sc.seeds[id] = parse_hex(spec.at("hex").get<std::string>());
                    } catch (const InvalidInputError& e) {
                        fail(path + ".hex", e.what());
                    }
                } else if (spec.is_object() && spec.contains("bits")) {
                    sc.fixed_bits[id] =
                        parse_bitstring(spec.at("bits").get<std::string>(), path + ".bits");
                } else {
                    fail(path, "expected {\"hex\": ...} or {\"bits\": ...}");
                }
            }
        }
    }

    if (j.contains("adversary")) {
        const auto& ja = j.at("adversary");
        sc.attack.trigger_v = num_at(ja, "adversary", "trigger_v", sc.attack.trigger_v);
        sc.attack.glitch_v = num_at(ja, "adversary", "glitch_v", sc.attack.glitch_v);
        sc.attack.level_step_v = num_at(ja, "adversary", "level_step_v", sc.attack.level_step_v);
        sc.attack.sigma_mult = num_at(ja, "adversary", "tau_sigma_mult", sc.attack.sigma_mult);
        sc.attack.eps_ns = num_at(ja, "adversary", "tau_epsilon_ns", sc.attack.eps_ns);
        sc.train_bits =
            static_cast<std::size_t>(num_at(ja, "adversary", "train_bits", 2000.0));
    }
    sc.attack.logic_threshold_v = sc.bus.logic_threshold_v;
    sc.attack.expected_header_id = sc.protocol.header_id;
    sc.attack.expect_resync = sc.bus.soft_resync;

    if (j.contains("countermeasures"))
        sc.bus.policies = parse_policies(j.at("countermeasures"), "countermeasures");

    if (!j.contains("experiment") || !j.at("experiment").is_object())
        fail("experiment", "missing object (seed is mandatory)");
    const auto& je = j.at("experiment");
    if (!je.contains("seed")) fail("experiment.seed", "missing required field");
    sc.experiment_seed = je.at("seed").get<uint64_t>();
    sc.trials = static_cast<std::size_t>(num_at(je, "experiment", "trials", 200.0));
    if (je.contains("pairs")) {
        std::size_t pi = 0;
        for (const auto& jp : je.at("pairs")) {
            const std::string path = "experiment.pairs[" + std::to_string(pi) + "]";
            if (!jp.is_array() || jp.size() != 2) fail(path, "expected [primary, secondary]");
            const std::string a = jp[0].get<std::string>();
            const std::string b = jp[1].get<std::string>();
            sc.bus.node_index(a);  // throws on unknown id
            sc.bus.node_index(b);
            sc.pairs.emplace_back(a, b);
            ++pi;
        }
    }
    if (je.contains("group")) {
        for (const auto& jg : je.at("group")) {
            sc.group.push_back(jg.get<std::string>());
            sc.bus.node_index(sc.group.back());
        }
    }

    if (j.contains("evaluate_grid")) {
        std::size_t gi = 0;
        for (const auto& jg : j.at("evaluate_grid")) {
            const std::string path = "evaluate_grid[" + std::to_string(gi) + "]";
            Scenario::GridEntry entry;
            entry.label = str_at(jg, path, "label", "", true);
            if (jg.contains("countermeasures"))
                entry.policies = parse_policies(jg.at("countermeasures"), path + ".countermeasures");
            sc.evaluate_grid.push_back(std::move(entry));
            ++gi;
        }
    }

    try {
        sc.bus.validate();
    } catch (const InvalidInputError& e) {
        throw SchemaError(std::string("scenario: ") + e.what());
    }
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("scenario file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path);
}

std::string scenario_to_json(const Scenario& sc) {
    json j;
    j["schema_version"] = sc.schema_version;
    j["name"] = sc.name;
    json jb;
    jb["bit_rate_bps"] = 1e9 / sc.bus.bit_period_ns;
    jb["sample_rate_hz"] = sc.bus.sample_rate_hz;
    jb["noise_sigma_v"] = sc.bus.noise_sigma_v;
    jb["logic_threshold_v"] = sc.bus.logic_threshold_v;
    jb["soft_resync"] = sc.bus.soft_resync;
    jb["observer_position_m"] = sc.bus.topology.observer_position_m;
    jb["bus_length_m"] = sc.bus.topology.effective_length_m();
    jb["propagation_ns_per_m"] = sc.bus.topology.propagation_ns_per_m;
    jb["cable_resistance_ohm_per_m"] = sc.bus.topology.cable_resistance_ohm_per_m;
    jb["termination_ohms"] = {sc.bus.topology.termination_ohms[0],
                              sc.bus.topology.termination_ohms[1]};
    j["bus"] = jb;
    j["nodes"] = json::array();
    for (const auto& n : sc.bus.nodes) {
        json jn;
        jn["id"] = n.id;
        jn["position_m"] = sc.bus.topology.node_positions_m[n.topo_index];
        jn["processing_ns"] = n.processing_ns;
        jn["sync_jitter_ns"] = n.sync_jitter_ns;
        jn["frame_jitter_ns"] = n.frame_jitter_ns;
        jn["profile"] = {{"canh_dominant_v", n.profile.canh_dominant_v},
                         {"canl_dominant_v", n.profile.canl_dominant_v},
                         {"drive_conductance_s", n.profile.drive_conductance_s},
                         {"load_conductance_s", n.profile.load_conductance_s},
                         {"rise_tau_ns", n.profile.rise_tau_ns},
                         {"fall_tau_ns", n.profile.fall_tau_ns},
                         {"supply_v", n.profile.supply_v}};
        j["nodes"].push_back(jn);
    }
    json jp;
    jp["header_id"] = sc.protocol.header_id;
    jp["chunk_bits"] = sc.protocol.chunk_bits;
    jp["target_key_bits"] = sc.protocol.target_key_bits;
    jp["frame_cap"] = sc.protocol.frame_cap;
    json jseeds = json::object();
    for (const auto& [id, bytes] : sc.seeds) jseeds[id] = {{"hex", to_hex(bytes)}};
    for (const auto& [id, bits] : sc.fixed_bits) {
        std::string s;
        for (uint8_t b : bits) s.push_back(b ? '1' : '0');
        jseeds[id] = {{"bits", s}};
    }
    jp["seeds"] = jseeds;
    j["protocol"] = jp;
    json ja;
    ja["trigger_v"] = sc.attack.trigger_v;
    ja["glitch_v"] = sc.attack.glitch_v;
    ja["level_step_v"] = sc.attack.level_step_v;
    ja["tau_sigma_mult"] = sc.attack.sigma_mult;
    ja["tau_epsilon_ns"] = sc.attack.eps_ns;
    ja["train_bits"] = sc.train_bits;
    j["adversary"] = ja;
    auto policies_json = [](const CountermeasureSet& p) {
        json jc = json::object();
        if (p.jitter)
            jc["jitter"] = {{"alpha", p.jitter->alpha},
                            {"budget_fraction", p.jitter->budget_fraction}};
        if (p.multi_transceiver)
            jc["multi_transceiver"] = {{"count", p.multi_transceiver->count},
                                       {"drive_spread", p.multi_transceiver->drive_spread},
                                       {"load_spread", p.multi_transceiver->load_spread},
                                       {"tau_spread", p.multi_transceiver->tau_spread}};
        if (p.passive) jc["passive"] = {{"p_isolate", p.passive->p_isolate}};
        if (p.active)
            jc["active"] = {{"p_assist", p.active->p_assist},
                            {"slots_per_bit", p.active->slots_per_bit},
                            {"start_slot", p.active->start_slot}};
        if (p.system_assist)
            jc["system_assist"] = {{"p_assist", p.system_assist->p_assist},
                                   {"dither_ns", p.system_assist->dither_ns}};
        return jc;
    };
    j["countermeasures"] = policies_json(sc.bus.policies);
    json je;
    je["seed"] = sc.experiment_seed;
    je["trials"] = sc.trials;
    je["pairs"] = json::array();
    for (const auto& [a, b] : sc.pairs) je["pairs"].push_back({a, b});
    je["group"] = sc.group;
    j["experiment"] = je;
    if (!sc.evaluate_grid.empty()) {
        j["evaluate_grid"] = json::array();
        for (const auto& g : sc.evaluate_grid) {
            json jg;
            jg["label"] = g.label;
            jg["countermeasures"] = policies_json(g.policies);
            j["evaluate_grid"].push_back(jg);
        }
    }
    return j.dump(2);
}

}  // namespace pnscan

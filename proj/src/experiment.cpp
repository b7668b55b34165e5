#include "pnscan/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pnscan/errors.hpp"
#include "pnscan/rng.hpp"

namespace pnscan {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw SimulationError("cannot write " + p.string());
    out << content;
}

SessionConfig pair_session(const Scenario& sc, const std::string& primary,
                           const std::string& secondary) {
    SessionConfig cfg;
    cfg.primary_id = primary;
    cfg.secondary_id = secondary;
    cfg.primary_stream = sc.stream_for(primary);
    cfg.secondary_stream = sc.stream_for(secondary);
    cfg.params = sc.protocol;
    return cfg;
}

// Rising-edge offsets relative to the frame's sync grid, labeled with the
// true driver, taken from a synthesized trace of one frame.
void session_edge_features(const BusContext& bus, const FrameTranscript& ft,
                           const AttackParams& attack, std::size_t primary_index,
                           std::size_t secondary_index, std::vector<double>& feat_primary,
                           std::vector<double>& feat_secondary) {
    const TraceWindow trace = synthesize_frame_trace(bus, ft);
    const auto events = detect_transitions(trace, attack.trigger_v, bus.bit_period_ns / 2.0);
    std::size_t ev = 0;
    for (std::size_t k = 1; k < ft.bits.size(); ++k) {
        const auto& r = ft.bits[k];
        if (r.phase != FramePhase::Payload || r.is_stuff) continue;
        if (!(ft.bits[k - 1].bus == 1 && r.bus == 0)) continue;
        const bool p_drives = (r.driver_mask >> primary_index) & 1u;
        const bool s_drives = (r.driver_mask >> secondary_index) & 1u;
        if (p_drives == s_drives) continue;  // want single-participant edges
        const double expect = r.nominal_start_ns + r.grid_phase_ns;
        while (ev < events.size() && events[ev].time_ns < expect - 0.5 * bus.bit_period_ns) ++ev;
        if (ev >= events.size()) break;
        const auto& e = events[ev];
        if (!e.rising || e.time_ns > expect + 0.5 * bus.bit_period_ns) continue;
        const double off = std::round((e.time_ns - expect) * 1e3) / 1e3;  // ps quantum
        (p_drives ? feat_primary : feat_secondary).push_back(off);
        ++ev;
    }
}

}  // namespace

double measure_training_advantage(const BusContext& bus, const std::string& id_i,
                                  const std::string& id_j, Feature feature, std::size_t n_bits,
                                  uint64_t seed) {
    const auto set_i = collect_training_data(bus, id_i, n_bits, derive_seed(seed, 0xA1));
    const auto set_j = collect_training_data(bus, id_j, n_bits, derive_seed(seed, 0xB2));
    const auto fi = extract_feature(set_i, feature, bus.logic_threshold_v);
    const auto fj = extract_feature(set_j, feature, bus.logic_threshold_v);
    if (fi.empty() || fj.empty()) return 0.5;
    const auto clf = train_pair_classifier(fi, fj, feature, id_i, id_j);
    return oriented_advantage(measure_advantage(clf, fi, fj));
}

double measure_session_advantage(const BusContext& bus_in, const SessionConfig& cfg,
                                 const AttackParams& attack, std::size_t n_samples,
                                 uint64_t seed) {
    // calibration semantics: roles held fixed, so each node's offsets stay
    // unimodal and the measure reads the pair's intrinsic separability
    BusContext bus = bus_in;
    bus.soft_resync = false;
    const std::size_t pi = bus.node_index(cfg.primary_id);
    const std::size_t si = bus.node_index(cfg.secondary_id);
    std::vector<double> fp, fs;
    std::size_t round = 0;
    while (fp.size() < n_samples / 2 || fs.size() < n_samples / 2) {
        SessionConfig run_cfg = cfg;
        // fresh pseudorandom chunks per round, deterministic in the seed
        Rng seeder(derive_seed(seed, 0xC0DE + round));
        std::vector<uint8_t> s1(16), s2(16);
        for (auto& b : s1) b = static_cast<uint8_t>(seeder.next_u64());
        for (auto& b : s2) b = static_cast<uint8_t>(seeder.next_u64());
        run_cfg.primary_stream = StreamSource::from_seed(s1);
        run_cfg.secondary_stream = StreamSource::from_seed(s2);
        const SessionResult sr = run_pns_two_party(bus, run_cfg, derive_seed(seed, 0xF00 + round));
        for (const auto& ft : sr.frames)
            session_edge_features(bus, ft, attack, pi, si, fp, fs);
        if (++round > 4096) break;  // give up rather than loop forever
    }
    if (fp.empty() || fs.empty()) return 0.5;
    const auto clf =
        train_pair_classifier(fp, fs, Feature::TransitionOffset, cfg.primary_id, cfg.secondary_id);
    return oriented_advantage(measure_advantage(clf, fp, fs));
}

double measure_session_voltage_advantage(const BusContext& bus_in, const SessionConfig& cfg,
                                         std::size_t n_samples, uint64_t seed) {
    BusContext bus = bus_in;
    bus.soft_resync = false;
    const std::size_t pi = bus.node_index(cfg.primary_id);
    const std::size_t si = bus.node_index(cfg.secondary_id);
    std::vector<double> fp, fs;
    std::size_t round = 0;
    while (fp.size() < n_samples / 2 || fs.size() < n_samples / 2) {
        SessionConfig run_cfg = cfg;
        Rng seeder(derive_seed(seed, 0xC0DE + round));
        std::vector<uint8_t> s1(16), s2(16);
        for (auto& b : s1) b = static_cast<uint8_t>(seeder.next_u64());
        for (auto& b : s2) b = static_cast<uint8_t>(seeder.next_u64());
        run_cfg.primary_stream = StreamSource::from_seed(s1);
        run_cfg.secondary_stream = StreamSource::from_seed(s2);
        const SessionResult sr = run_pns_two_party(bus, run_cfg, derive_seed(seed, 0xF00 + round));
        for (const auto& ft : sr.frames) {
            const TraceWindow trace = synthesize_frame_trace(bus, ft);
            const double dt = trace.sample_period_ns();
            for (std::size_t k = 0; k < ft.bits.size(); ++k) {
                const auto& r = ft.bits[k];
                if (r.phase != FramePhase::Payload || r.bus != 0) continue;
                const bool p_drives = (r.driver_mask >> pi) & 1u;
                const bool s_drives = (r.driver_mask >> si) & 1u;
                if (p_drives == s_drives) continue;
                const double a = r.nominal_start_ns + r.grid_phase_ns + 0.62 * bus.bit_period_ns;
                const double b = r.nominal_start_ns + r.grid_phase_ns + 0.92 * bus.bit_period_ns;
                std::size_t ia = static_cast<std::size_t>(std::max(0.0, (a - trace.t0_ns) / dt));
                std::size_t ib = static_cast<std::size_t>(std::max(0.0, (b - trace.t0_ns) / dt));
                ib = std::min(ib, trace.samples.size());
                if (ia >= ib) continue;
                double acc = 0.0;
                for (std::size_t i = ia; i < ib; ++i) acc += trace.samples[i];
                const double level = acc / static_cast<double>(ib - ia);
                (p_drives ? fp : fs).push_back(std::round(level * 1e9) / 1e9);
            }
        }
        if (++round > 4096) break;
    }
    if (fp.empty() || fs.empty()) return 0.5;
    const auto clf =
        train_pair_classifier(fp, fs, Feature::SteadyVoltage, cfg.primary_id, cfg.secondary_id);
    return oriented_advantage(measure_advantage(clf, fp, fs));
}

PairAttackStats attack_pair(const Scenario& sc, const std::string& primary,
                            const std::string& secondary, uint64_t seed) {
    PairAttackStats st;
    st.primary = primary;
    st.secondary = secondary;
    const SessionConfig cfg = pair_session(sc, primary, secondary);
    const SessionResult sr = run_pns_two_party(sc.bus, cfg, seed);
    st.frames = sr.frames.size();

    for (std::size_t f = 0; f < sr.frames.size(); ++f) {
        const auto& ft = sr.frames[f];
        const TraceWindow trace = synthesize_frame_trace(sc.bus, ft);
        const AttackResult ar = timing_attack(trace, sc.bus.bit_period_ns, sc.attack);

        // true key bits per pair from the transcript
        std::vector<int> truth(ft.payload_bus_bits.size() / 2, -1);
        for (const auto& r : ft.bits)
            if (r.kept) truth[static_cast<std::size_t>(r.pair_index)] = r.key_bit;
        const std::size_t n_pairs = std::min(truth.size(), ar.pair_key_bits.size());
        for (std::size_t p = 0; p < n_pairs; ++p) {
            if (truth[p] < 0) continue;
            ++st.secret_bits;
            if (ar.pair_erased[p]) {
                ++st.erasures;
            } else if (ar.pair_key_bits[p] == truth[p]) {
                ++st.recovered;
            } else {
                ++st.errors;
            }
        }
    }
    const std::size_t judged = st.recovered + st.errors;
    st.accuracy = judged > 0 ? static_cast<double>(st.recovered) / static_cast<double>(judged) : 0.0;
    st.accuracy_se = judged > 0
        ? std::sqrt(st.accuracy * (1.0 - st.accuracy) / static_cast<double>(judged))
        : 0.0;
    st.d_train = measure_training_advantage(sc.bus, primary, secondary, Feature::TransitionOffset,
                                            sc.train_bits, derive_seed(seed, 0x7E57));
    st.d_session = measure_session_advantage(sc.bus, cfg, sc.attack,
                                             std::max<std::size_t>(256, 2 * sc.trials),
                                             derive_seed(seed, 0x5E5510));
    return st;
}

namespace {

std::vector<std::pair<std::string, std::string>> effective_pairs(const Scenario& sc) {
    if (!sc.pairs.empty()) return sc.pairs;
    if (sc.bus.nodes.size() < 2)
        throw DependencyError("scenario has no pairs and fewer than 2 nodes");
    return {{sc.bus.nodes[0].id, sc.bus.nodes[1].id}};
}

std::string report_header(const Scenario& sc, const std::string& kind) {
    std::ostringstream os;
    os << "# pnscan " << kind << " report\n";
    os << "scenario: " << sc.name << "\n";
    os << "experiment_seed: " << sc.experiment_seed << "\n";
    os << "trials: " << sc.trials << "\n";
    os << "fidelity: DC network levels, first-order transients; analog probe bandwidth"
          " and transmission-line reflections not modeled\n";
    os << "--- resolved scenario ---\n";
    os << scenario_to_json(sc) << "\n";
    return os.str();
}

std::string stats_line(const PairAttackStats& st) {
    std::ostringstream os;
    os << "pair primary=" << st.primary << " secondary=" << st.secondary
       << " frames=" << st.frames << " secret_bits=" << st.secret_bits
       << " recovered=" << st.recovered << " erasures=" << st.erasures
       << " errors=" << st.errors << " accuracy=" << fmt("%.6f", st.accuracy) << "+/-"
       << fmt("%.6f", st.accuracy_se) << " d_train=" << fmt("%.6f", st.d_train)
       << " d_session=" << fmt("%.6f", st.d_session);
    return os.str();
}

std::string stats_csv_row(const PairAttackStats& st) {
    std::ostringstream os;
    os << st.primary << ',' << st.secondary << ',' << st.frames << ',' << st.secret_bits << ','
       << st.recovered << ',' << st.erasures << ',' << st.errors << ','
       << fmt("%.6f", st.accuracy) << ',' << fmt("%.6f", st.accuracy_se) << ','
       << fmt("%.6f", st.d_train) << ',' << fmt("%.6f", st.d_session);
    return os.str();
}

constexpr const char* kStatsCsvHeader =
    "primary,secondary,frames,secret_bits,recovered,erasures,errors,accuracy,accuracy_se,"
    "d_train,d_session";

std::vector<PairAttackStats> run_attack_matrix(const Scenario& sc) {
    std::vector<PairAttackStats> out;
    const auto pairs = effective_pairs(sc);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        out.push_back(
            attack_pair(sc, pairs[i].first, pairs[i].second, derive_seed(sc.experiment_seed, i)));
    return out;
}

Scenario load_with_overrides(const std::string& scenario_path, const RunOverrides& ov) {
    Scenario sc = load_scenario(scenario_path);
    if (ov.seed) sc.experiment_seed = *ov.seed;
    if (ov.trials) sc.trials = *ov.trials;
    if (!ov.pairs.empty()) {
        for (const auto& [a, b] : ov.pairs) {
            sc.bus.node_index(a);
            sc.bus.node_index(b);
        }
        sc.pairs = ov.pairs;
    }
    if (!ov.grid_labels.empty()) {
        std::vector<Scenario::GridEntry> kept;
        for (const auto& entry : sc.evaluate_grid)
            if (std::find(ov.grid_labels.begin(), ov.grid_labels.end(), entry.label) !=
                ov.grid_labels.end())
                kept.push_back(entry);
        if (kept.empty())
            throw DependencyError("no evaluate_grid entry matches the requested --grid labels");
        sc.evaluate_grid = std::move(kept);
    }
    return sc;
}

}  // namespace

void cmd_simulate(const std::string& scenario_path, const std::string& out_dir,
                  const RunOverrides& overrides) {
    const Scenario sc = load_with_overrides(scenario_path, overrides);
    fs::create_directories(out_dir);
    const auto pairs = effective_pairs(sc);
    std::ostringstream keys;
    keys << "# session keys\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [a, b] = pairs[i];
        const SessionConfig cfg = pair_session(sc, a, b);
        const SessionResult sr =
            run_pns_two_party(sc.bus, cfg, derive_seed(sc.experiment_seed, i));
        const std::string tag = a + "_" + b;
        {
            std::ofstream t(fs::path(out_dir) / (tag + "_transcript.jsonl"), std::ios::binary);
            write_transcript(t, sr);
        }
        {
            const TraceWindow trace = synthesize_frame_trace(sc.bus, sr.frames.front());
            std::ofstream t(fs::path(out_dir) / (tag + "_frame0.csv"), std::ios::binary);
            write_trace_csv(t, trace);
        }
        keys << tag << ": ";
        for (uint8_t bit : sr.key_primary) keys << int(bit);
        keys << " (frames=" << sr.frames.size() << ")\n";
    }
    write_file(fs::path(out_dir) / "session_keys.txt", keys.str());
    write_file(fs::path(out_dir) / "resolved_scenario.json", scenario_to_json(sc) + "\n");
}

void cmd_attack(const std::string& scenario_path, const std::string& out_dir,
                const RunOverrides& overrides) {
    const Scenario sc = load_with_overrides(scenario_path, overrides);
    fs::create_directories(out_dir);
    const auto stats = run_attack_matrix(sc);
    std::ostringstream txt, csv;
    txt << report_header(sc, "attack");
    txt << "--- pairs ---\n";
    csv << kStatsCsvHeader << "\n";
    for (const auto& st : stats) {
        txt << stats_line(st) << "\n";
        csv << stats_csv_row(st) << "\n";
    }
    write_file(fs::path(out_dir) / "attack_report.txt", txt.str());
    write_file(fs::path(out_dir) / "attack_report.csv", csv.str());
}

void cmd_evaluate(const std::string& scenario_path, const std::string& out_dir,
                  const RunOverrides& overrides) {
    Scenario sc = load_with_overrides(scenario_path, overrides);
    fs::create_directories(out_dir);
    std::vector<Scenario::GridEntry> grid = sc.evaluate_grid;
    if (grid.empty()) grid.push_back({"none", CountermeasureSet{}});

    std::ostringstream txt, csv;
    txt << report_header(sc, "evaluate");
    csv << "grid," << kStatsCsvHeader << "\n";
    std::vector<PairAttackStats> baseline;
    for (const auto& entry : grid) {
        Scenario cell = sc;
        cell.bus.policies = entry.policies;
        const auto stats = run_attack_matrix(cell);
        txt << "--- grid " << entry.label << " ---\n";
        for (std::size_t i = 0; i < stats.size(); ++i) {
            txt << stats_line(stats[i]);
            if (!baseline.empty() && i < baseline.size()) {
                txt << " delta_accuracy=" << fmt("%+.6f", stats[i].accuracy - baseline[i].accuracy)
                    << " delta_d=" << fmt("%+.6f", stats[i].d_session - baseline[i].d_session);
            }
            txt << "\n";
            csv << entry.label << ',' << stats_csv_row(stats[i]) << "\n";
        }
        if (baseline.empty()) baseline = stats;
    }
    write_file(fs::path(out_dir) / "evaluate_report.txt", txt.str());
    write_file(fs::path(out_dir) / "evaluate_report.csv", csv.str());
}

void cmd_order_group(const std::string& advantage_csv_path, const std::vector<std::string>& group,
                     const std::string& out_dir, uint64_t seed) {
    std::ifstream in(advantage_csv_path);
    if (!in) throw DependencyError("advantage matrix not found: " + advantage_csv_path);
    const AdvantageGraph full = read_advantage_csv(in);
    std::vector<std::string> members = group;
    if (members.empty()) members = full.ids;
    const AdvantageGraph sub = build_advantage_graph(
        members, [&](const std::string& a, const std::string& b) -> std::optional<double> {
            const double w = full.at(full.index_of(a), full.index_of(b));
            if (w < 0.0) return std::nullopt;
            return w;
        });
    const OrderTree tree = min_max_spanning_tree(sub);

    fs::create_directories(out_dir);
    std::ostringstream ts;
    ts << "# group ordering\nroot: " << tree.ids[tree.root] << "\nmax_edge_d: "
       << fmt("%.6f", tree.max_edge_weight) << "\nedges:\n";
    for (const auto& [p, c] : tree.edges())
        ts << "  " << tree.ids[p] << " -> " << tree.ids[c] << " d="
           << fmt("%.6f", sub.at(static_cast<std::size_t>(p), static_cast<std::size_t>(c))) << "\n";
    write_file(fs::path(out_dir) / "order_tree.txt", ts.str());

    // masked rank broadcast: per-member gateway keys derived from the seed
    std::map<std::string, std::vector<uint8_t>> gw_keys;
    for (std::size_t i = 0; i < members.size(); ++i) {
        Rng kr(derive_seed(seed, 0x6B00 + i));
        std::vector<uint8_t> key(16);
        for (auto& b : key) b = static_cast<uint8_t>(kr.next_u64());
        gw_keys[members[i]] = key;
    }
    std::vector<uint8_t> nonce(16);
    Rng nr(derive_seed(seed, 0x4E4F4E43));
    for (auto& b : nonce) b = static_cast<uint8_t>(nr.next_u64());
    std::vector<std::string> order;
    for (int idx : tree.order) order.push_back(tree.ids[idx]);
    const MaskedOrder masked = mask_order(order, gw_keys, nonce);
    std::ostringstream ms;
    ms << to_hex(masked.nonce);
    for (const auto& tok : masked.tokens) ms << "||" << to_hex(tok);
    ms << "\n";
    write_file(fs::path(out_dir) / "masked_order.txt", ms.str());
}

void cmd_export(const std::string& scenario_path, const std::string& out_dir) {
    const Scenario sc = load_scenario(scenario_path);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "resolved_scenario.json", scenario_to_json(sc) + "\n");

    // steady-state level enumeration over the first few nodes
    const std::size_t n = std::min<std::size_t>(sc.bus.nodes.size(), 4);
    std::vector<TransceiverProfile> profiles;
    Topology topo = sc.bus.topology;
    topo.node_positions_m.clear();
    for (std::size_t i = 0; i < n; ++i) {
        profiles.push_back(sc.bus.nodes[i].profile);
        topo.node_positions_m.push_back(
            sc.bus.topology.node_positions_m[sc.bus.nodes[i].topo_index]);
    }
    std::ostringstream lv;
    lv << "states,volts\n";
    std::vector<TransceiverState> states(n, TransceiverState::Recessive);
    const std::size_t combos = static_cast<std::size_t>(std::pow(3.0, static_cast<double>(n)));
    for (std::size_t c = 0; c < combos; ++c) {
        std::size_t acc = c;
        std::string label;
        for (std::size_t i = 0; i < n; ++i) {
            states[i] = static_cast<TransceiverState>(acc % 3);
            acc /= 3;
            label += states[i] == TransceiverState::Dominant     ? 'D'
                     : states[i] == TransceiverState::Recessive ? 'R'
                                                                : 'X';
        }
        double v = 0.0;
        try {
            v = resolve_steady_state(states, profiles, topo);
        } catch (const DegenerateNetworkError&) {
            continue;
        }
        lv << label << ',' << fmt("%.6f", v) << "\n";
    }
    write_file(fs::path(out_dir) / "levels.csv", lv.str());
}

}  // namespace pnscan

#include "pnscan/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <unordered_map>

#include "pnscan/rng.hpp"

namespace pnscan {

void TraceWindow::validate() const {
    if (samples.empty()) throw InvalidInputError("trace: no samples");
    if (!(bit_period_ns > 0.0)) throw InvalidInputError("trace: bit_period_ns must be > 0");
    if (sample_rate_hz < 2.0 / bit_period_ns * 1e9)
        throw InvalidInputError("trace: need at least 2 samples per bit");
}

std::vector<double> synthesize_bit_waveform(double prev_level_v, double target_level_v,
                                            double transition_start_ns, double tau_ns,
                                            double t0_ns, double sample_rate_hz,
                                            std::size_t n_samples) {
    if (!(tau_ns > 0.0)) throw InvalidInputError("synthesize_bit_waveform: tau_ns must be > 0");
    std::vector<double> out(n_samples);
    const double dt = 1e9 / sample_rate_hz;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = t0_ns + static_cast<double>(i) * dt;
        if (t < transition_start_ns) {
            out[i] = prev_level_v;
        } else {
            out[i] = target_level_v +
                     (prev_level_v - target_level_v) * std::exp(-(t - transition_start_ns) / tau_ns);
        }
    }
    return out;
}

void synthesize_bit_waveform(double prev_level_v, double target_level_v,
                             double transition_start_ns, double tau_ns, TraceWindow& window) {
    window.samples = synthesize_bit_waveform(prev_level_v, target_level_v, transition_start_ns,
                                             tau_ns, window.t0_ns, window.sample_rate_hz,
                                             window.samples.size());
}

namespace {

struct StateEvent {
    double observer_time_ns;
    std::size_t entry;  // index into schedule.entries
    TransceiverState state;
};

// State vectors repeat heavily within a frame; memoize the DC solve.
// Two bits per transceiver, so up to 32 transceivers fit the key.
uint64_t pack_states(const std::vector<TransceiverState>& s) {
    uint64_t key = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        key |= static_cast<uint64_t>(s[i]) << (2 * i);
    return key;
}

}  // namespace

TraceWindow simulate_frame(const FrameSchedule& schedule, const Topology& topology,
                           double noise_sigma_v, uint64_t seed, double sample_rate_hz,
                           double lead_bits, double tail_bits) {
    if (schedule.entries.empty()) throw InvalidInputError("simulate_frame: empty schedule");
    if (schedule.entries.size() > 32)
        throw InvalidInputError("simulate_frame: more than 32 transceivers unsupported");
    if (noise_sigma_v < 0.0) throw InvalidInputError("simulate_frame: noise_sigma_v must be >= 0");
    const std::size_t n_bits = schedule.entries.front().bits.size();
    for (const auto& e : schedule.entries) {
        if (e.bits.size() != n_bits)
            throw InvalidInputError("simulate_frame: mismatched schedule lengths");
        if (e.topo_index >= topology.node_positions_m.size())
            throw InvalidInputError("simulate_frame: schedule topo_index out of range");
    }

    std::vector<StateEvent> events;
    events.reserve(schedule.entries.size() * n_bits);
    for (std::size_t ei = 0; ei < schedule.entries.size(); ++ei) {
        const auto& entry = schedule.entries[ei];
        const double prop =
            topology.propagation_delay_from_ns(topology.node_positions_m[entry.topo_index]);
        for (std::size_t b = 0; b < n_bits; ++b) {
            const auto& plan = entry.bits[b];
            const double bit_start =
                schedule.t0_ns + static_cast<double>(b) * schedule.bit_period_ns + plan.start_offset_ns;
            for (const auto& seg : plan.segments)
                events.push_back({bit_start + seg.offset_in_bit_ns + prop, ei, seg.state});
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const StateEvent& a, const StateEvent& b) {
                         return a.observer_time_ns < b.observer_time_ns;
                     });

    const double frame_span = static_cast<double>(n_bits) * schedule.bit_period_ns;
    const double trace_t0 = schedule.t0_ns - lead_bits * schedule.bit_period_ns;
    const double trace_end = schedule.t0_ns + frame_span + tail_bits * schedule.bit_period_ns;
    const double dt = 1e9 / sample_rate_hz;
    const std::size_t n_samples = static_cast<std::size_t>(std::ceil((trace_end - trace_t0) / dt));

    TraceWindow trace;
    trace.sample_rate_hz = sample_rate_hz;
    trace.t0_ns = trace_t0;
    trace.bit_period_ns = schedule.bit_period_ns;
    trace.samples.resize(n_samples);

    std::vector<TransceiverState> states(schedule.entries.size(), TransceiverState::Recessive);
    std::vector<TransceiverProfile> profiles;
    profiles.reserve(schedule.entries.size());
    Topology sub = topology;
    sub.node_positions_m.clear();
    for (const auto& e : schedule.entries) {
        profiles.push_back(e.profile);
        sub.node_positions_m.push_back(topology.node_positions_m[e.topo_index]);
    }

    std::unordered_map<uint64_t, double> level_memo;
    auto level_of = [&](const std::vector<TransceiverState>& sv) {
        const uint64_t key = pack_states(sv);
        auto it = level_memo.find(key);
        if (it != level_memo.end()) return it->second;
        const double v = resolve_steady_state(sv, profiles, sub);
        level_memo.emplace(key, v);
        return v;
    };

    // Piecewise exponential: from each event, the trace relaxes from its
    // instantaneous value toward the new DC target with the triggering
    // transceiver's rise/fall tau (fastest tau wins on simultaneous events).
    double anchor_v = level_of(states);
    double target_v = anchor_v;
    double anchor_t = trace_t0;
    double tau = 1.0;
    std::size_t next_event = 0;

    auto value_at = [&](double t) {
        if (target_v == anchor_v) return target_v;
        return target_v + (anchor_v - target_v) * std::exp(-(t - anchor_t) / tau);
    };

    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = trace.time_at(i);
        while (next_event < events.size() && events[next_event].observer_time_ns <= t) {
            const double et = events[next_event].observer_time_ns;
            const double v_now = value_at(et);
            const std::size_t batch_start = next_event;
            bool changed = false;
            // apply all events at this instant together
            while (next_event < events.size() &&
                   events[next_event].observer_time_ns <= et + 1e-9) {
                const auto& ev = events[next_event];
                if (states[ev.entry] != ev.state) {
                    states[ev.entry] = ev.state;
                    changed = true;
                }
                ++next_event;
            }
            if (!changed) continue;
            const double new_target = level_of(states);
            anchor_v = v_now;
            anchor_t = et;
            if (new_target != target_v) {
                // tau by edge direction; fastest triggering device wins ties
                double trig_tau = 0.0;
                for (std::size_t k = batch_start; k < next_event; ++k) {
                    const auto& p = schedule.entries[events[k].entry].profile;
                    const double cand = new_target > v_now ? p.rise_tau_ns : p.fall_tau_ns;
                    if (trig_tau == 0.0 || cand < trig_tau) trig_tau = cand;
                }
                tau = trig_tau;
            }
            target_v = new_target;
        }
        trace.samples[i] = value_at(t);
    }
    if (noise_sigma_v > 0.0) {
        Rng noise(seed);
        for (double& s : trace.samples) s += noise.gaussian(0.0, noise_sigma_v);
    }
    return trace;
}

std::vector<int> decode_logical_bits(const TraceWindow& trace, double grid_t0_ns,
                                     double bit_period_ns, std::size_t n_bits,
                                     double logic_threshold_v, double sample_frac) {
    std::vector<int> bits(n_bits, 1);
    for (std::size_t b = 0; b < n_bits; ++b) {
        const double t = grid_t0_ns + (static_cast<double>(b) + sample_frac) * bit_period_ns;
        const double idx = (t - trace.t0_ns) / trace.sample_period_ns();
        if (idx < 0.0 || idx >= static_cast<double>(trace.samples.size())) continue;
        const double v = trace.samples[static_cast<std::size_t>(idx)];
        bits[b] = v > logic_threshold_v ? 0 : 1;
    }
    return bits;
}

void write_trace_csv(std::ostream& out, const TraceWindow& trace) {
    out << "time_ns,volts\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        const long long t = std::llround(trace.time_at(i));
        std::snprintf(buf, sizeof(buf), "%lld,%.6f\n", t, trace.samples[i]);
        out << buf;
    }
}

}  // namespace pnscan

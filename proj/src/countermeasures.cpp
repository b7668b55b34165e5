#include "pnscan/countermeasures.hpp"

#include <cmath>

#include "pnscan/errors.hpp"

namespace pnscan {

void JitterInterval::validate(double max_jitter_ns) const {
    if (lo_ns > hi_ns) throw InvalidInputError("jitter interval: lo > hi");
    if (width_ns() > max_jitter_ns + 1e-9)
        throw InvalidInputError("jitter interval exceeds permissible jitter");
}

double observed_offset(const TimingGeometry& g) {
    return (g.t_r2_ns - g.t_r1_ns) + (g.t_a2_ns - g.t_a1_ns) + g.t_p2_ns;
}

std::pair<JitterInterval, JitterInterval> compute_jitter_intervals(double t12_ns, double alpha,
                                                                   double max_jitter_ns) {
    if (!(t12_ns > 0.0)) throw InvalidInputError("compute_jitter_intervals: t12 must be > 0");
    if (alpha < 0.0) throw InvalidInputError("compute_jitter_intervals: alpha must be >= 0");
    const double span = alpha * t12_ns;
    if (span > max_jitter_ns + 1e-9)
        throw InvalidInputError("compute_jitter_intervals: alpha*t12 exceeds jitter budget");
    return {JitterInterval{0.0, span}, JitterInterval{-span, 0.0}};
}

std::vector<TransceiverState> multi_transceiver_states(std::size_t n, int intent_bit, Rng& rng) {
    if (n == 0) throw InvalidInputError("multi_transceiver_states: need at least one transceiver");
    if (n > 20) throw InvalidInputError("multi_transceiver_states: transceiver count too large");
    std::vector<TransceiverState> states(n);
    if (intent_bit == 0) {
        // rejection from uniform {D,R,X}^n keeps the accepted set exactly uniform
        for (;;) {
            bool any_dominant = false;
            for (std::size_t i = 0; i < n; ++i) {
                const uint64_t r = rng.uniform_below(3);
                states[i] = static_cast<TransceiverState>(r);
                any_dominant |= states[i] == TransceiverState::Dominant;
            }
            if (any_dominant) return states;
        }
    }
    // recessive intent: {Recessive, Isolated}^n with at least one listener
    for (;;) {
        bool any_listening = false;
        for (std::size_t i = 0; i < n; ++i) {
            states[i] = rng.uniform_below(2) == 0 ? TransceiverState::Recessive
                                                  : TransceiverState::Isolated;
            any_listening |= states[i] == TransceiverState::Recessive;
        }
        if (any_listening) return states;
    }
}

std::vector<std::vector<uint8_t>> passive_cooperation(std::size_t n_nonparticipants,
                                                      FramePhase phase, std::size_t n_bits,
                                                      double p_isolate, Rng& rng) {
    if (phase != FramePhase::Payload)
        throw PolicyViolationError("passive_cooperation: isolation allowed only in the payload phase");
    if (p_isolate < 0.0 || p_isolate > 1.0)
        throw InvalidInputError("passive_cooperation: p_isolate outside [0,1]");
    std::vector<std::vector<uint8_t>> sched(n_nonparticipants, std::vector<uint8_t>(n_bits, 0));
    for (auto& node : sched)
        for (auto& bit : node) bit = rng.bernoulli(p_isolate) ? 1 : 0;
    return sched;
}

std::vector<StateSegment> active_cooperation(bool rising_edge_detected, double p_assist,
                                             double bit_period_ns, unsigned slots_per_bit,
                                             unsigned start_slot, Rng& rng) {
    if (!rising_edge_detected) return {};
    if (slots_per_bit < 2) throw InvalidInputError("active_cooperation: need >= 2 slots per bit");
    if (start_slot >= slots_per_bit) return {};
    if (!rng.bernoulli(p_assist)) return {};
    const double slot_ns = bit_period_ns / slots_per_bit;
    std::vector<StateSegment> segs;
    segs.push_back({0.0, TransceiverState::Recessive});
    for (unsigned s = start_slot; s < slots_per_bit; ++s) {
        const TransceiverState st =
            rng.bernoulli(0.5) ? TransceiverState::Dominant : TransceiverState::Recessive;
        segs.push_back({s * slot_ns, st});
    }
    // release before the next bit takes over
    if (segs.back().state != TransceiverState::Recessive)
        segs.push_back({(slots_per_bit - 0.25) * slot_ns, TransceiverState::Recessive});
    return segs;
}

std::vector<std::size_t> system_assist_predecessors(std::size_t chain_len,
                                                    std::size_t primary_chain_pos) {
    if (primary_chain_pos >= chain_len)
        throw InvalidInputError("system_assist_predecessors: position outside chain");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < primary_chain_pos; ++i) out.push_back(i);
    return out;
}

std::vector<uint8_t> system_assist_mask(std::span<const uint8_t> primary_payload_tx,
                                        bool predecessor_holds_key) {
    if (!predecessor_holds_key)
        throw AuthorizationError("system_assist_mask: predecessor lacks the running key");
    std::vector<uint8_t> mask(primary_payload_tx.size());
    for (std::size_t i = 0; i < primary_payload_tx.size(); ++i)
        mask[i] = primary_payload_tx[i] == 0 ? 1 : 0;
    return mask;
}

std::vector<TransceiverProfile> multi_transceiver_hardware(const TransceiverProfile& base,
                                                           const std::string& node_id,
                                                           const MultiTransceiverPolicy& policy) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : node_id) h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
    Rng rng(derive_seed(h, 0x7C5));
    std::vector<TransceiverProfile> bank;
    bank.reserve(policy.count);
    for (std::size_t i = 0; i < policy.count; ++i) {
        TransceiverProfile p = base;
        p.drive_conductance_s *= 1.0 + policy.drive_spread * (rng.uniform01() - 0.5);
        p.load_conductance_s *= 1.0 + policy.load_spread * (rng.uniform01() - 0.5);
        p.rise_tau_ns *= 1.0 + policy.tau_spread * (rng.uniform01() - 0.5);
        p.fall_tau_ns *= 1.0 + policy.tau_spread * (rng.uniform01() - 0.5);
        bank.push_back(p);
    }
    return bank;
}

double estimate_propagation_delay(const TraceWindow& trace, double partner_nominal_start_ns,
                                  const TransceiverProfile& partner) {
    // first rising edge: locate low/high steady flanks, interpolate 50%%
    const auto& s = trace.samples;
    if (s.size() < 4) throw EstimationError("estimate_propagation_delay: trace too short");
    double lo = s.front();
    double hi = lo;
    for (double v : s) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 0.2) throw EstimationError("estimate_propagation_delay: no transition found");
    const double mid = 0.5 * (hi + lo);
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i - 1] <= mid && s[i] > mid) {
            const double frac = (mid - s[i - 1]) / (s[i] - s[i - 1]);
            const double t50 = trace.time_at(i - 1) + frac * trace.sample_period_ns();
            return t50 - partner_nominal_start_ns - partner.rise_tau_ns * std::log(2.0);
        }
    }
    throw EstimationError("estimate_propagation_delay: no rising transition found");
}

}  // namespace pnscan

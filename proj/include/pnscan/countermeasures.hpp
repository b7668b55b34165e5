#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pnscan/can_frame.hpp"
#include "pnscan/rng.hpp"
#include "pnscan/waveform.hpp"

namespace pnscan {

/// Bit-start jitter window; the start time is drawn uniformly from it and
/// the bit duration absorbs the shift so the frame grid is preserved.
struct JitterInterval {
    double lo_ns = 0.0;
    double hi_ns = 0.0;

    double width_ns() const { return hi_ns - lo_ns; }
    double draw(Rng& rng) const { return lo_ns == hi_ns ? lo_ns : rng.uniform(lo_ns, hi_ns); }
    void validate(double max_jitter_ns) const;
};

/// Propagation/synchronization geometry between two communicating nodes
/// and a probing observer, all offsets relative to a common reference.
struct TimingGeometry {
    double t_a1_ns = 0.0;  // node 1 -> observer propagation
    double t_a2_ns = 0.0;  // node 2 -> observer propagation
    double t_12_ns = 0.0;  // node 1 -> node 2 propagation
    double t_r1_ns = 0.0;  // node 1 bit-start offset from reference
    double t_r2_ns = 0.0;  // node 2 bit-start offset from reference
    double t_ra_ns = 0.0;  // observer clock offset from reference
    double t_p2_ns = 0.0;  // node 2 processing time
};

/// Offset between the two nodes' transitions as seen by the observer:
/// (offset between nodes) + (difference in propagation delay) + (processing).
double observed_offset(const TimingGeometry& g);

/// The complementary jitter windows (0, alpha*t12) and (-alpha*t12, 0)
/// that the two participants draw their bit starts from.
std::pair<JitterInterval, JitterInterval> compute_jitter_intervals(double t12_ns, double alpha,
                                                                   double max_jitter_ns);

/// State vector for a node equipped with n tri-state transceivers.
/// Dominant intent: uniform over the 3^n - 2^n vectors with at least one
/// driver. Recessive intent: uniform over the 2^n - 1 {Recessive,Isolated}
/// vectors that keep at least one receiver connected.
std::vector<TransceiverState> multi_transceiver_states(std::size_t n, int intent_bit, Rng& rng);

/// Per-bit isolation schedule for nonparticipating nodes; only legal
/// during the payload phase (listening is preserved elsewhere).
/// Result is [node][bit], 1 = isolated for that bit.
std::vector<std::vector<uint8_t>> passive_cooperation(std::size_t n_nonparticipants,
                                                      FramePhase phase, std::size_t n_bits,
                                                      double p_isolate, Rng& rng);

/// Intra-bit assist after a detected recessive-to-dominant transition:
/// the node toggles dominant/idle per sub-bit slot for the bit remainder.
/// Returns no segments when no edge was seen or the random gate declines.
std::vector<StateSegment> active_cooperation(bool rising_edge_detected, double p_assist,
                                             double bit_period_ns, unsigned slots_per_bit,
                                             unsigned start_slot, Rng& rng);

/// Chain members eligible to assist the session whose primary sits at
/// primary_chain_pos (0-based): everyone strictly before it.
std::vector<std::size_t> system_assist_predecessors(std::size_t chain_len,
                                                    std::size_t primary_chain_pos);

/// Bits a keyed predecessor may reinforce: exactly the known participant's
/// expected dominant payload bits. Requires the running key.
std::vector<uint8_t> system_assist_mask(std::span<const uint8_t> primary_payload_tx,
                                        bool predecessor_holds_key);

/// Propagation-delay estimate from one clean partner transition: 50%%
/// crossing minus the nominal start and the partner's transient offset.
/// Cooperative setup step, so the partner's profile is known.
double estimate_propagation_delay(const TraceWindow& trace, double partner_nominal_start_ns,
                                  const TransceiverProfile& partner);

struct JitterPolicy {
    double alpha = -1.0;           // < 0: auto = min(1, budget / t12)
    double budget_fraction = 0.1;  // of the bit period
};

struct MultiTransceiverPolicy {
    std::size_t count = 2;
    double drive_spread = 0.1;  // deterministic per-transceiver perturbation
    double load_spread = 0.1;
    double tau_spread = 0.1;
};

/// The fixed bank of perturbed transceivers a node is equipped with under
/// the multi-transceiver policy: generic (pairwise distinct) electricals,
/// deterministic per node id.
std::vector<TransceiverProfile> multi_transceiver_hardware(const TransceiverProfile& base,
                                                           const std::string& node_id,
                                                           const MultiTransceiverPolicy& policy);

struct PassivePolicy {
    double p_isolate = 0.5;
};

struct ActivePolicy {
    double p_assist = 0.5;
    unsigned slots_per_bit = 16;
    unsigned start_slot = 2;  // detection latency in slots
};

struct SystemAssistPolicy {
    double p_assist = 0.5;
    double dither_ns = 40.0;
};

struct CountermeasureSet {
    std::optional<JitterPolicy> jitter;
    std::optional<MultiTransceiverPolicy> multi_transceiver;
    std::optional<PassivePolicy> passive;
    std::optional<ActivePolicy> active;
    std::optional<SystemAssistPolicy> system_assist;

    bool any() const {
        return jitter || multi_transceiver || passive || active || system_assist;
    }
};

}  // namespace pnscan

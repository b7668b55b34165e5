#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pnscan/bus_model.hpp"

namespace pnscan {

/// Sampled differential-voltage waveform: the adversary's raw view of the bus.
struct TraceWindow {
    double sample_rate_hz = 125e6;
    double t0_ns = 0.0;
    double bit_period_ns = 2000.0;
    std::vector<double> samples;

    double sample_period_ns() const { return 1e9 / sample_rate_hz; }
    double time_at(std::size_t i) const { return t0_ns + static_cast<double>(i) * sample_period_ns(); }
    double end_ns() const { return time_at(samples.empty() ? 0 : samples.size()); }
    void validate() const;
};

/// First-order exponential settle toward target_level starting at
/// transition_start_ns; samples before the transition hold prev_level.
std::vector<double> synthesize_bit_waveform(double prev_level_v, double target_level_v,
                                            double transition_start_ns, double tau_ns,
                                            double t0_ns, double sample_rate_hz,
                                            std::size_t n_samples);

/// Overload writing into an existing window descriptor.
void synthesize_bit_waveform(double prev_level_v, double target_level_v,
                             double transition_start_ns, double tau_ns, TraceWindow& window);

/// Sub-bit state change: the transceiver switches to `state` at
/// offset_in_bit_ns after its (jittered) bit start.
struct StateSegment {
    double offset_in_bit_ns = 0.0;
    TransceiverState state = TransceiverState::Recessive;
};

/// One transceiver's plan for one bit slot. start_offset_ns shifts the
/// whole bit (sync lag + jitter); the device then follows its segments and
/// holds the last state until its next bit plan takes over.
struct BitPlan {
    double start_offset_ns = 0.0;
    std::vector<StateSegment> segments;

    BitPlan() { segments.push_back({0.0, TransceiverState::Recessive}); }
    explicit BitPlan(TransceiverState s, double offset_ns = 0.0) : start_offset_ns(offset_ns) {
        segments.push_back({0.0, s});
    }
};

/// Per-transceiver schedule; topo_index points into Topology::node_positions_m.
struct TransceiverSchedule {
    std::size_t topo_index = 0;
    TransceiverProfile profile;
    std::vector<BitPlan> bits;
};

struct FrameSchedule {
    double t0_ns = 0.0;
    double bit_period_ns = 2000.0;
    std::vector<TransceiverSchedule> entries;

    std::size_t bit_count() const { return entries.empty() ? 0 : entries.front().bits.size(); }
};

/// Synthesizes the observer's differential-voltage trace for a full frame.
/// Each state change reaches the observer propagation-delayed by the
/// transceiver's distance; between changes the level settles exponentially
/// toward the DC solution of the current state vector, with the time
/// constant of the transceiver that triggered the change. Additive i.i.d.
/// Gaussian noise per sample; deterministic for a given seed.
TraceWindow simulate_frame(const FrameSchedule& schedule, const Topology& topology,
                           double noise_sigma_v, uint64_t seed,
                           double sample_rate_hz = 125e6, double lead_bits = 1.0,
                           double tail_bits = 1.0);

/// Samples each bit at sample_frac of its period and thresholds against
/// logic_threshold_v (differential above threshold = dominant = logical 0).
std::vector<int> decode_logical_bits(const TraceWindow& trace, double grid_t0_ns,
                                     double bit_period_ns, std::size_t n_bits,
                                     double logic_threshold_v, double sample_frac = 0.75);

/// CSV columns time_ns (integer) and volts (6 fractional digits);
/// bit-exact across platforms.
void write_trace_csv(std::ostream& out, const TraceWindow& trace);

}  // namespace pnscan

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pnscan/can_frame.hpp"
#include "pnscan/countermeasures.hpp"
#include "pnscan/prf.hpp"
#include "pnscan/waveform.hpp"

namespace pnscan {

/// Chunk bit source: a keyed pseudorandom stream, or fixed bits (cycled)
/// for driving sessions with hand-picked chunks in tests and fixtures.
class StreamSource {
public:
    /// Defaults to the all-zero seed stream; normally built via from_seed
    /// or from_bits.
    StreamSource() = default;
    static StreamSource from_seed(std::vector<uint8_t> seed);
    static StreamSource from_bits(std::vector<uint8_t> bits);

    uint8_t bit(uint64_t index) const;

private:
    std::optional<StreamPrf> prf_;
    std::vector<uint8_t> fixed_;
};

struct NodeConfig {
    std::string id;
    std::size_t topo_index = 0;  // into Topology::node_positions_m
    TransceiverProfile profile;
    double processing_ns = 0.0;   // bus-signal processing lag when syncing
    double sync_jitter_ns = 0.0;  // per-bit gaussian dither of bit starts
    double frame_jitter_ns = 0.0;  // per-frame gaussian offset (slow drift)
};

/// Everything a session needs to run on the simulated bus: geometry,
/// node electricals, signalling parameters and active countermeasures.
struct BusContext {
    Topology topology;
    std::vector<NodeConfig> nodes;
    double bit_period_ns = 2000.0;
    double sample_rate_hz = 125e6;
    double noise_sigma_v = 0.01;
    double logic_threshold_v = 0.9;
    bool soft_resync = true;
    CountermeasureSet policies;

    std::size_t node_index(const std::string& id) const;
    void validate() const;
};

struct ProtocolParams {
    std::size_t chunk_bits = 32;  // half the maximum CAN 2.0 payload
    std::size_t target_key_bits = 64;
    std::size_t frame_cap = 64;
    uint16_t header_id = kDefaultPnsHeaderId;
};

struct SessionConfig {
    std::string primary_id;
    std::string secondary_id;
    StreamSource primary_stream;
    StreamSource secondary_stream;
    ProtocolParams params;
};

/// One transmitted bit of a session frame, in stuffed (as-transmitted) order.
struct BitRecord {
    FramePhase phase = FramePhase::Sof;
    bool is_stuff = false;
    uint8_t primary_tx = 1;
    uint8_t secondary_tx = 1;
    uint8_t bus = 1;
    int payload_index = -1;  // unstuffed payload position
    int pair_index = -1;
    bool kept = false;
    int key_bit = -1;
    uint32_t driver_mask = 0;  // bus-node indices driving dominant
    double nominal_start_ns = 0.0;
    double grid_phase_ns = 0.0;  // sync owner's bit-start phase at this bit
};

struct FrameTranscript {
    std::vector<BitRecord> bits;           // stuffed order
    std::vector<uint8_t> payload_bus_bits; // unstuffed payload
    uint16_t crc = 0;
    FrameSchedule schedule;
    uint64_t noise_seed = 0;
    std::size_t harvested_after = 0;
};

struct SessionResult {
    std::string primary_id;
    std::string secondary_id;
    std::vector<uint8_t> key_primary;
    std::vector<uint8_t> key_secondary;
    std::vector<FrameTranscript> frames;
};

/// Replaces each chunk bit b with the pair (b, !b); doubles the length.
std::vector<uint8_t> interleave_with_complement(std::span<const uint8_t> chunk);
std::vector<uint8_t> deinterleave(std::span<const uint8_t> packet);

/// Runs the two-party key agreement over the simulated bus until
/// target_key_bits are harvested; throws ExhaustionError at the frame cap.
SessionResult run_pns_two_party(const BusContext& bus, const SessionConfig& cfg, uint64_t seed);

/// What a third node holding the primary's stream can reconstruct from the
/// public bus outputs alone (used by chained group nodes to follow keys).
std::vector<uint8_t> derive_key_from_observation(const SessionResult& session,
                                                 const StreamSource& primary_stream,
                                                 const ProtocolParams& params);

struct GroupResult {
    std::vector<std::string> order;
    std::map<std::string, std::vector<uint8_t>> keys;
    std::vector<SessionResult> sessions;
};

/// Sequential pairwise sessions along the chain; each intermediate node
/// seeds its next session with the key it just obtained, and earlier
/// nodes follow by observation. Every member ends with the final key.
GroupResult run_group_key_linear(const BusContext& bus, const std::vector<std::string>& group,
                                 const std::map<std::string, std::vector<uint8_t>>& seeds,
                                 const ProtocolParams& params, uint64_t seed);

TraceWindow synthesize_frame_trace(const BusContext& bus, const FrameTranscript& frame);

/// Structured per-bit session log (one JSON object per line).
void write_transcript(std::ostream& out, const SessionResult& session);

}  // namespace pnscan

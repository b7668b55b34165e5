#include "pnscan/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "pnscan/errors.hpp"
#include "pnscan/rng.hpp"

namespace pnscan {

StreamSource StreamSource::from_seed(std::vector<uint8_t> seed) {
    StreamSource s;
    s.prf_.emplace(std::span<const uint8_t>(seed));
    return s;
}

StreamSource StreamSource::from_bits(std::vector<uint8_t> bits) {
    if (bits.empty()) throw InvalidInputError("StreamSource: fixed bit pattern empty");
    StreamSource s;
    s.fixed_ = std::move(bits);
    return s;
}

uint8_t StreamSource::bit(uint64_t index) const {
    if (prf_) return prf_->bit_at(index);
    if (fixed_.empty()) throw InvalidInputError("StreamSource: unseeded stream");
    return fixed_[index % fixed_.size()];
}

std::size_t BusContext::node_index(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id == id) return i;
    throw InvalidInputError("bus: unknown node id '" + id + "'");
}

void BusContext::validate() const {
    topology.validate();
    if (nodes.empty()) throw InvalidInputError("bus: no nodes");
    for (const auto& n : nodes) {
        n.profile.validate();
        if (n.topo_index >= topology.node_positions_m.size())
            throw InvalidInputError("bus: node '" + n.id + "' topo_index out of range");
    }
    if (!(bit_period_ns > 0.0)) throw InvalidInputError("bus: bit_period_ns must be > 0");
    if (sample_rate_hz < 2e9 / bit_period_ns)
        throw InvalidInputError("bus: need at least 2 samples per bit");
}

std::vector<uint8_t> interleave_with_complement(std::span<const uint8_t> chunk) {
    if (chunk.empty()) throw InvalidInputError("interleave: empty chunk");
    std::vector<uint8_t> packet;
    packet.reserve(chunk.size() * 2);
    for (uint8_t b : chunk) {
        packet.push_back(b);
        packet.push_back(b ? 0 : 1);
    }
    return packet;
}

std::vector<uint8_t> deinterleave(std::span<const uint8_t> packet) {
    if (packet.empty() || packet.size() % 2 != 0)
        throw InvalidInputError("deinterleave: packet length must be even and nonzero");
    std::vector<uint8_t> chunk(packet.size() / 2);
    for (std::size_t i = 0; i < chunk.size(); ++i) chunk[i] = packet[2 * i];
    return chunk;
}

namespace {

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits) {
    std::vector<uint8_t> bytes((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) bytes[i / 8] |= static_cast<uint8_t>(1u << (7 - i % 8));
    return bytes;
}

// Logical layer of one PnS frame: both nodes stuff and accumulate the CRC
// from the observed bus values, so their framing decisions agree even
// though neither knows the other's payload bits.
struct LogicalFrame {
    std::vector<BitRecord> bits;
    std::vector<uint8_t> payload_bus;
    uint16_t crc = 0;
};

LogicalFrame build_logical_frame(const std::vector<uint8_t>& packet1,
                                 const std::vector<uint8_t>& packet2, uint16_t header_id) {
    LogicalFrame f;
    const std::size_t payload_bits = packet1.size();
    const unsigned dlc = static_cast<unsigned>(payload_bits / 8);

    int run_bit = -1;
    int run = 0;
    std::vector<uint8_t> crc_feed;

    auto append = [&](FramePhase ph, uint8_t ptx, uint8_t stx, int pidx, bool stuffed_region,
                      bool feeds_crc) {
        BitRecord r;
        r.phase = ph;
        r.primary_tx = ptx;
        r.secondary_tx = stx;
        r.bus = ptx & stx;
        r.payload_index = pidx;
        if (pidx >= 0) r.pair_index = pidx / 2;
        f.bits.push_back(r);
        if (feeds_crc) crc_feed.push_back(r.bus);
        if (pidx >= 0) f.payload_bus.push_back(r.bus);
        if (!stuffed_region) {
            run_bit = -1;
            run = 0;
            return;
        }
        if (static_cast<int>(r.bus) == run_bit) {
            if (++run == 5) {
                const uint8_t s = r.bus ? 0 : 1;
                BitRecord sr;
                sr.phase = ph;
                sr.is_stuff = true;
                sr.primary_tx = s;
                sr.secondary_tx = s;
                sr.bus = s;
                f.bits.push_back(sr);
                run_bit = s;
                run = 1;
            }
        } else {
            run_bit = r.bus;
            run = 1;
        }
    };

    const auto header = pns_header_bits(header_id, dlc);
    static const FramePhase header_phase[kHeaderBits] = {
        FramePhase::Sof, FramePhase::Id,  FramePhase::Id,  FramePhase::Id, FramePhase::Id,
        FramePhase::Id,  FramePhase::Id,  FramePhase::Id,  FramePhase::Id, FramePhase::Id,
        FramePhase::Id,  FramePhase::Id,  FramePhase::Rtr, FramePhase::Ide, FramePhase::R0,
        FramePhase::Dlc, FramePhase::Dlc, FramePhase::Dlc, FramePhase::Dlc};
    for (std::size_t i = 0; i < header.size(); ++i)
        append(header_phase[i], header[i], 1, -1, true, true);

    for (std::size_t i = 0; i < payload_bits; ++i)
        append(FramePhase::Payload, packet1[i], packet2[i], static_cast<int>(i), true, true);

    f.crc = crc15(crc_feed);
    for (uint8_t b : crc15_bits(f.crc)) append(FramePhase::Crc, b, b, -1, true, false);

    append(FramePhase::CrcDelim, 1, 1, -1, false, false);
    append(FramePhase::Ack, 1, 1, -1, false, false);
    append(FramePhase::AckDelim, 1, 1, -1, false, false);
    for (int i = 0; i < 7; ++i) append(FramePhase::Eof, 1, 1, -1, false, false);
    return f;
}

struct ParticipantHardware {
    std::vector<TransceiverProfile> transceivers;  // 1 or N (multi-transceiver)
};

ParticipantHardware make_hardware(const NodeConfig& node,
                                  const std::optional<MultiTransceiverPolicy>& multi) {
    ParticipantHardware hw;
    if (!multi) {
        hw.transceivers.push_back(node.profile);
        return hw;
    }
    hw.transceivers = multi_transceiver_hardware(node.profile, node.id, *multi);
    return hw;
}

struct SessionTiming {
    bool jitter_active = false;
    JitterInterval primary_interval;
    JitterInterval secondary_interval;
    bool resync_enabled = true;
};

}  // namespace

static FrameTranscript build_frame(const BusContext& bus, const SessionConfig& cfg,
                                   const std::vector<uint8_t>& chunk1,
                                   const std::vector<uint8_t>& chunk2,
                                   const SessionTiming& timing,
                                   const std::vector<std::size_t>& assist_nodes, Rng& policy_rng,
                                   uint64_t noise_seed) {
    const std::size_t pi = bus.node_index(cfg.primary_id);
    const std::size_t si = bus.node_index(cfg.secondary_id);
    const auto packet1 = interleave_with_complement(chunk1);
    const auto packet2 = interleave_with_complement(chunk2);

    FrameTranscript ft;
    LogicalFrame lf = build_logical_frame(packet1, packet2, cfg.params.header_id);
    ft.bits = std::move(lf.bits);
    ft.payload_bus_bits = std::move(lf.payload_bus);
    ft.crc = lf.crc;
    ft.noise_seed = noise_seed;

    const std::size_t n_nodes = bus.nodes.size();
    const std::size_t n_bits = ft.bits.size();
    const auto& topo = bus.topology;
    auto pos_of = [&](std::size_t n) { return topo.node_positions_m[bus.nodes[n].topo_index]; };
    auto prop_between = [&](std::size_t a, std::size_t b) {
        return std::abs(pos_of(a) - pos_of(b)) * topo.propagation_ns_per_m;
    };

    // Harvest marks (on the first bit of each kept pair).
    for (auto& r : ft.bits) {
        if (r.payload_index < 0 || r.payload_index % 2 != 0) continue;
        const std::size_t pair = static_cast<std::size_t>(r.pair_index);
        const uint8_t b1 = ft.payload_bus_bits[2 * pair];
        const uint8_t b2 = ft.payload_bus_bits[2 * pair + 1];
        if (b1 == 0 && b2 == 0) {
            r.kept = true;
            r.key_bit = chunk1[pair];
        }
    }

    // Per-node hardware (participants may carry multiple transceivers).
    std::vector<ParticipantHardware> hardware(n_nodes);
    for (std::size_t n = 0; n < n_nodes; ++n) {
        const bool participant = n == pi || n == si;
        hardware[n] = make_hardware(bus.nodes[n],
                                    participant ? bus.policies.multi_transceiver : std::nullopt);
    }

    // Passive isolation draws for nonparticipants over the payload bits.
    std::vector<std::size_t> nonparticipants;
    for (std::size_t n = 0; n < n_nodes; ++n)
        if (n != pi && n != si) nonparticipants.push_back(n);
    std::vector<std::vector<uint8_t>> isolation;
    std::size_t payload_stuffed_bits = 0;
    for (const auto& r : ft.bits)
        if (r.phase == FramePhase::Payload) ++payload_stuffed_bits;
    if (bus.policies.passive && !nonparticipants.empty()) {
        isolation = passive_cooperation(nonparticipants.size(), FramePhase::Payload,
                                        payload_stuffed_bits, bus.policies.passive->p_isolate,
                                        policy_rng);
    }

    // System-level assist: keyed predecessors reinforce the primary's
    // expected dominant payload bits.
    std::vector<uint8_t> assist_mask;
    if (!assist_nodes.empty() && bus.policies.system_assist) {
        std::vector<uint8_t> primary_tx;
        for (const auto& r : ft.bits)
            if (r.phase == FramePhase::Payload) primary_tx.push_back(r.primary_tx);
        assist_mask = system_assist_mask(primary_tx, /*predecessor_holds_key=*/true);
    }

    // Schedule skeleton.
    FrameSchedule sched;
    sched.t0_ns = 0.0;
    sched.bit_period_ns = bus.bit_period_ns;
    std::vector<std::size_t> first_entry_of_node(n_nodes);
    for (std::size_t n = 0; n < n_nodes; ++n) {
        first_entry_of_node[n] = sched.entries.size();
        for (const auto& prof : hardware[n].transceivers) {
            TransceiverSchedule ts;
            ts.topo_index = bus.nodes[n].topo_index;
            ts.profile = prof;
            ts.bits.resize(n_bits);
            sched.entries.push_back(std::move(ts));
        }
    }

    // Synchronization state: everybody aligns to the primary's header and
    // then follows whichever participant triggered the last
    // recessive-to-dominant edge (CAN soft resynchronization). Each node
    // carries a per-frame acquisition bias on top of its propagation and
    // processing lags (slow drift across frames).
    std::vector<double> bias(n_nodes, 0.0);
    for (std::size_t n = 0; n < n_nodes; ++n)
        if (bus.nodes[n].frame_jitter_ns > 0.0)
            bias[n] = policy_rng.gaussian(0.0, bus.nodes[n].frame_jitter_ns);
    std::vector<double> phase(n_nodes, 0.0);
    std::size_t owner = pi;
    auto resync_to = [&](std::size_t new_owner, double owner_offset) {
        for (std::size_t n = 0; n < n_nodes; ++n) {
            if (n == new_owner) continue;
            phase[n] = owner_offset + prop_between(new_owner, n) + bus.nodes[n].processing_ns +
                       bias[n];
        }
        phase[new_owner] = owner_offset;
        owner = new_owner;
    };
    resync_to(pi, bias[pi]);

    std::size_t payload_counter = 0;  // stuffed payload bit ordinal
    for (std::size_t k = 0; k < n_bits; ++k) {
        BitRecord& r = ft.bits[k];
        r.nominal_start_ns = static_cast<double>(k) * bus.bit_period_ns;
        r.grid_phase_ns = phase[owner];
        const bool is_payload = r.phase == FramePhase::Payload;
        const bool rising_edge = k > 0 && ft.bits[k - 1].bus == 1 && r.bus == 0;

        std::vector<double> offset(n_nodes);
        for (std::size_t n = 0; n < n_nodes; ++n) {
            double off = phase[n];
            if (bus.nodes[n].sync_jitter_ns > 0.0)
                off += policy_rng.gaussian(0.0, bus.nodes[n].sync_jitter_ns);
            if (timing.jitter_active && is_payload) {
                if (n == pi) off += timing.primary_interval.draw(policy_rng);
                if (n == si) off += timing.secondary_interval.draw(policy_rng);
            }
            offset[n] = off;
        }

        for (std::size_t n = 0; n < n_nodes; ++n) {
            const std::size_t base = first_entry_of_node[n];
            const std::size_t n_tx = hardware[n].transceivers.size();
            if (n == pi || n == si) {
                const uint8_t intent = n == pi ? r.primary_tx : r.secondary_tx;
                if (intent == 0) r.driver_mask |= 1u << n;
                if (n_tx == 1) {
                    sched.entries[base].bits[k] = BitPlan(
                        intent == 0 ? TransceiverState::Dominant : TransceiverState::Recessive,
                        offset[n]);
                } else {
                    const auto states = multi_transceiver_states(n_tx, intent, policy_rng);
                    for (std::size_t t = 0; t < n_tx; ++t)
                        sched.entries[base + t].bits[k] = BitPlan(states[t], offset[n]);
                }
                continue;
            }
            // nonparticipant
            BitPlan plan(TransceiverState::Recessive, offset[n]);
            const auto np_it = std::find(nonparticipants.begin(), nonparticipants.end(), n);
            const std::size_t np_idx = static_cast<std::size_t>(np_it - nonparticipants.begin());
            if (is_payload && !isolation.empty() && isolation[np_idx][payload_counter])
                plan = BitPlan(TransceiverState::Isolated, offset[n]);
            if (is_payload && bus.policies.active && rising_edge &&
                plan.segments.front().state == TransceiverState::Recessive) {
                auto segs = active_cooperation(true, bus.policies.active->p_assist,
                                               bus.bit_period_ns, bus.policies.active->slots_per_bit,
                                               bus.policies.active->start_slot, policy_rng);
                if (!segs.empty()) {
                    plan.segments = std::move(segs);
                    r.driver_mask |= 1u << n;
                }
            }
            if (is_payload && !assist_mask.empty() &&
                std::find(assist_nodes.begin(), assist_nodes.end(), n) != assist_nodes.end() &&
                r.payload_index >= 0 &&
                assist_mask[static_cast<std::size_t>(r.payload_index)]) {
                if (policy_rng.bernoulli(bus.policies.system_assist->p_assist)) {
                    const double dither = bus.policies.system_assist->dither_ns;
                    plan = BitPlan(TransceiverState::Dominant,
                                   offset[n] + policy_rng.uniform(-dither / 2.0, dither / 2.0));
                    r.driver_mask |= 1u << n;
                }
            }
            if (r.phase == FramePhase::Ack) {
                plan = BitPlan(TransceiverState::Dominant, offset[n]);
                r.driver_mask |= 1u << n;
            }
            sched.entries[base].bits[k] = std::move(plan);
        }
        if (is_payload) ++payload_counter;

        if (timing.resync_enabled && rising_edge) {
            const bool owner_drives = (owner == pi && r.primary_tx == 0) ||
                                      (owner == si && r.secondary_tx == 0);
            if (owner_drives) {
                resync_to(owner, offset[owner]);
            } else if (r.primary_tx == 0) {
                resync_to(pi, offset[pi]);
            } else if (r.secondary_tx == 0) {
                resync_to(si, offset[si]);
            }
        }
    }

    ft.schedule = std::move(sched);
    return ft;
}

static SessionResult run_session_impl(const BusContext& bus, const SessionConfig& cfg,
                                      uint64_t seed, const std::vector<std::size_t>& assist_nodes) {
    bus.validate();
    if (cfg.primary_id == cfg.secondary_id)
        throw InvalidInputError("session: primary and secondary must differ");
    if (cfg.params.chunk_bits == 0 || cfg.params.chunk_bits > 32 ||
        (2 * cfg.params.chunk_bits) % 8 != 0)
        throw InvalidInputError("session: chunk_bits must be a positive multiple of 4, <= 32");
    if (cfg.params.target_key_bits == 0)
        throw InvalidInputError("session: target_key_bits must be > 0");
    const std::size_t pi = bus.node_index(cfg.primary_id);
    const std::size_t si = bus.node_index(cfg.secondary_id);
    if (bus.nodes.size() > 32) throw InvalidInputError("session: more than 32 bus nodes");

    SessionTiming timing;
    timing.resync_enabled = bus.soft_resync;
    if (bus.policies.jitter) {
        const auto& topo = bus.topology;
        const double t12 = std::abs(topo.node_positions_m[bus.nodes[pi].topo_index] -
                                    topo.node_positions_m[bus.nodes[si].topo_index]) *
                           topo.propagation_ns_per_m;
        const double budget = bus.policies.jitter->budget_fraction * bus.bit_period_ns;
        double alpha = bus.policies.jitter->alpha;
        if (alpha < 0.0) alpha = t12 > 0.0 ? std::min(1.0, budget / t12) : 0.0;
        if (t12 > 0.0) {
            auto [i1, i2] = compute_jitter_intervals(t12, alpha, budget);
            timing.primary_interval = i1;
            timing.secondary_interval = i2;
            timing.jitter_active = true;
        }
        timing.resync_enabled = false;  // jitter scheme runs with resync off
    }

    SessionResult result;
    result.primary_id = cfg.primary_id;
    result.secondary_id = cfg.secondary_id;

    std::vector<uint8_t> harvested_primary;
    std::vector<uint8_t> harvested_secondary;
    Rng policy_rng(derive_seed(seed, 0x5E55));

    for (std::size_t frame = 0; frame < cfg.params.frame_cap; ++frame) {
        std::vector<uint8_t> chunk1(cfg.params.chunk_bits), chunk2(cfg.params.chunk_bits);
        for (std::size_t i = 0; i < cfg.params.chunk_bits; ++i) {
            const uint64_t idx = frame * cfg.params.chunk_bits + i;
            chunk1[i] = cfg.primary_stream.bit(idx);
            chunk2[i] = cfg.secondary_stream.bit(idx);
        }
        FrameTranscript ft = build_frame(bus, cfg, chunk1, chunk2, timing, assist_nodes,
                                         policy_rng, derive_seed(seed, 0x2000 + frame));
        for (std::size_t pair = 0; pair < cfg.params.chunk_bits; ++pair) {
            if (ft.payload_bus_bits[2 * pair] == 0 && ft.payload_bus_bits[2 * pair + 1] == 0) {
                harvested_primary.push_back(chunk1[pair]);
                harvested_secondary.push_back(chunk2[pair]);
            }
        }
        ft.harvested_after = harvested_primary.size();
        result.frames.push_back(std::move(ft));
        if (harvested_primary.size() >= cfg.params.target_key_bits) break;
    }
    if (harvested_primary.size() < cfg.params.target_key_bits)
        throw ExhaustionError("session: frame cap reached with " +
                              std::to_string(harvested_primary.size()) + " of " +
                              std::to_string(cfg.params.target_key_bits) + " key bits");

    harvested_primary.resize(cfg.params.target_key_bits);
    harvested_secondary.resize(cfg.params.target_key_bits);
    result.key_primary = harvested_primary;
    result.key_secondary.resize(harvested_secondary.size());
    for (std::size_t i = 0; i < harvested_secondary.size(); ++i)
        result.key_secondary[i] = harvested_secondary[i] ? 0 : 1;  // secondary inverts
    if (result.key_primary != result.key_secondary)
        throw SimulationError("session: key mismatch after inversion");
    return result;
}

SessionResult run_pns_two_party(const BusContext& bus, const SessionConfig& cfg, uint64_t seed) {
    return run_session_impl(bus, cfg, seed, {});
}

std::vector<uint8_t> derive_key_from_observation(const SessionResult& session,
                                                 const StreamSource& primary_stream,
                                                 const ProtocolParams& params) {
    std::vector<uint8_t> key;
    for (std::size_t f = 0; f < session.frames.size(); ++f) {
        const auto& bus_bits = session.frames[f].payload_bus_bits;
        for (std::size_t pair = 0; pair * 2 + 1 < bus_bits.size(); ++pair) {
            if (bus_bits[2 * pair] == 0 && bus_bits[2 * pair + 1] == 0) {
                key.push_back(primary_stream.bit(f * params.chunk_bits + pair));
                if (key.size() == params.target_key_bits) return key;
            }
        }
    }
    return key;
}

GroupResult run_group_key_linear(const BusContext& bus, const std::vector<std::string>& group,
                                 const std::map<std::string, std::vector<uint8_t>>& seeds,
                                 const ProtocolParams& params, uint64_t seed) {
    if (group.size() < 2) throw InvalidInputError("group key: need at least 2 members");
    GroupResult res;
    res.order = group;

    std::map<std::string, std::vector<uint8_t>> held_key;  // current key bits per member
    for (std::size_t t = 0; t + 1 < group.size(); ++t) {
        const std::string& primary = group[t];
        const std::string& secondary = group[t + 1];
        SessionConfig cfg;
        cfg.primary_id = primary;
        cfg.secondary_id = secondary;
        cfg.params = params;
        cfg.primary_stream = t == 0 ? StreamSource::from_seed(seeds.at(primary))
                                    : StreamSource::from_seed(pack_bits(held_key.at(primary)));
        cfg.secondary_stream = StreamSource::from_seed(seeds.at(secondary));

        std::vector<std::size_t> assist;
        if (bus.policies.system_assist) {
            // predecessors in the chain reinforce the keyed participant
            for (std::size_t j = 0; j < t; ++j) assist.push_back(bus.node_index(group[j]));
        }
        SessionResult sr = run_session_impl(bus, cfg, derive_seed(seed, t), assist);

        // earlier members follow the new key from the public bus outputs
        for (std::size_t j = 0; j < t; ++j) {
            const auto derived = derive_key_from_observation(
                sr, StreamSource::from_seed(pack_bits(held_key.at(group[j]))), params);
            held_key[group[j]] = derived;
        }
        held_key[primary] = sr.key_primary;
        held_key[secondary] = sr.key_secondary;
        res.sessions.push_back(std::move(sr));
    }
    res.keys = held_key;
    return res;
}

TraceWindow synthesize_frame_trace(const BusContext& bus, const FrameTranscript& frame) {
    return simulate_frame(frame.schedule, bus.topology, bus.noise_sigma_v, frame.noise_seed,
                          bus.sample_rate_hz);
}

namespace {
const char* phase_name(FramePhase p) {
    switch (p) {
        case FramePhase::Sof: return "sof";
        case FramePhase::Id: return "id";
        case FramePhase::Rtr: return "rtr";
        case FramePhase::Ide: return "ide";
        case FramePhase::R0: return "r0";
        case FramePhase::Dlc: return "dlc";
        case FramePhase::Payload: return "payload";
        case FramePhase::Crc: return "crc";
        case FramePhase::CrcDelim: return "crc_delim";
        case FramePhase::Ack: return "ack";
        case FramePhase::AckDelim: return "ack_delim";
        case FramePhase::Eof: return "eof";
    }
    return "?";
}
}  // namespace

void write_transcript(std::ostream& out, const SessionResult& session) {
    std::size_t harvested = 0;
    for (std::size_t f = 0; f < session.frames.size(); ++f) {
        const auto& frame = session.frames[f];
        for (std::size_t i = 0; i < frame.bits.size(); ++i) {
            const auto& r = frame.bits[i];
            if (r.kept) ++harvested;
            out << "{\"frame\":" << f << ",\"bit\":" << i << ",\"phase\":\"" << phase_name(r.phase)
                << "\",\"stuff\":" << (r.is_stuff ? "true" : "false")
                << ",\"primary\":" << int(r.primary_tx) << ",\"secondary\":" << int(r.secondary_tx)
                << ",\"bus\":" << int(r.bus);
            if (r.pair_index >= 0) out << ",\"pair\":" << r.pair_index;
            out << ",\"kept\":" << (r.kept ? "true" : "false");
            if (r.key_bit >= 0) out << ",\"key_bit\":" << r.key_bit;
            out << ",\"harvested\":" << harvested << "}\n";
        }
    }
}

}  // namespace pnscan

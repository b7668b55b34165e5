#include "pnscan/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "pnscan/errors.hpp"
#include "pnscan/rng.hpp"

namespace pnscan {

namespace {

std::vector<double> smooth3(const std::vector<double>& v) {
    if (v.size() < 3) return v;
    std::vector<double> out(v.size());
    out.front() = (v[0] + v[1]) / 2.0;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) out[i] = (v[i - 1] + v[i] + v[i + 1]) / 3.0;
    out.back() = (v[v.size() - 2] + v.back()) / 2.0;
    return out;
}

// rolling min/max over a forward window, O(n) via monotonic deques
void rolling_minmax(const std::vector<double>& v, std::size_t w, std::vector<double>& mn,
                    std::vector<double>& mx) {
    const std::size_t n = v.size();
    mn.assign(n, 0.0);
    mx.assign(n, 0.0);
    std::deque<std::size_t> qmin, qmax;
    for (std::size_t i = 0; i < n; ++i) {
        while (!qmin.empty() && v[qmin.back()] >= v[i]) qmin.pop_back();
        qmin.push_back(i);
        while (!qmax.empty() && v[qmax.back()] <= v[i]) qmax.pop_back();
        qmax.push_back(i);
        if (i + 1 >= w) {
            const std::size_t start = i + 1 - w;
            while (qmin.front() < start) qmin.pop_front();
            while (qmax.front() < start) qmax.pop_front();
            mn[start] = v[qmin.front()];
            mx[start] = v[qmax.front()];
        }
    }
    // tail windows are truncated; reuse the last full window values
    const double last_mn = n >= w ? mn[n - w] : 0.0;
    const double last_mx = n >= w ? mx[n - w] : 0.0;
    for (std::size_t i = n >= w ? n - w + 1 : 0; i < n; ++i) {
        mn[i] = last_mn;
        mx[i] = last_mx;
    }
}

}  // namespace

std::vector<TransitionEvent> detect_transitions(const TraceWindow& trace, double trigger_v,
                                                double steady_min_ns) {
    trace.validate();
    if (!(trigger_v > 0.0)) throw InvalidInputError("detect_transitions: trigger_v must be > 0");
    if (steady_min_ns <= 0.0) steady_min_ns = trace.bit_period_ns / 2.0;
    const double dt = trace.sample_period_ns();
    const std::size_t w = std::max<std::size_t>(2, static_cast<std::size_t>(steady_min_ns / dt));
    const auto v = smooth3(trace.samples);
    if (v.size() < w + 2) return {};

    std::vector<double> rmin, rmax;
    rolling_minmax(v, w, rmin, rmax);
    auto steady_at = [&](std::size_t i) { return rmax[i] - rmin[i] < trigger_v; };

    std::vector<TransitionEvent> events;
    double level = (rmin[0] + rmax[0]) / 2.0;
    std::size_t i = 0;
    while (i < v.size()) {
        if (std::abs(v[i] - level) <= trigger_v) {
            ++i;
            continue;
        }
        // deviation: scan forward for the next steady stretch
        std::size_t j = i;
        while (j + w < v.size() && !steady_at(j)) ++j;
        if (j + w >= v.size()) break;
        const double new_level = (rmin[j] + rmax[j]) / 2.0;
        if (std::abs(new_level - level) > trigger_v) {
            // real transition: interpolate the 50% crossing
            const double mid = (level + new_level) / 2.0;
            const bool rising = new_level > level;
            double t50 = trace.time_at(j);
            for (std::size_t k = i == 0 ? 1 : i; k <= j; ++k) {
                const bool crossed = rising ? (v[k - 1] <= mid && v[k] > mid)
                                            : (v[k - 1] >= mid && v[k] < mid);
                if (crossed) {
                    const double frac = (mid - v[k - 1]) / (v[k] - v[k - 1]);
                    t50 = trace.time_at(k - 1) + frac * dt;
                    break;
                }
            }
            events.push_back({t50, rising, level, new_level});
        }
        level = new_level;  // glitches recover to (about) the old level
        i = j + 1;
    }
    return events;
}

SyncParams estimate_sync_params(std::span<const double> header_offsets, double sigma_mult,
                                double eps_ns) {
    if (header_offsets.size() < 2)
        throw InsufficientHeaderError("estimate_sync_params: need at least 2 header transitions");
    double mu = 0.0;
    for (double o : header_offsets) mu += o;
    mu /= static_cast<double>(header_offsets.size());
    double var = 0.0;
    for (double o : header_offsets) var += (o - mu) * (o - mu);
    var /= static_cast<double>(header_offsets.size() - 1);
    SyncParams p;
    p.mu_ns = mu;
    p.sigma_ns = std::sqrt(var);
    p.tau_ns = mu + sigma_mult * std::max(p.sigma_ns, eps_ns);
    return p;
}

SyncParams estimate_sync_params(std::span<const TransitionEvent> header_events, double grid_t0_ns,
                                double bit_period_ns, double sigma_mult, double eps_ns) {
    std::vector<double> offsets;
    offsets.reserve(header_events.size());
    for (const auto& e : header_events) {
        const double k = std::round((e.time_ns - grid_t0_ns) / bit_period_ns);
        offsets.push_back(e.time_ns - (grid_t0_ns + k * bit_period_ns));
    }
    return estimate_sync_params(offsets, sigma_mult, eps_ns);
}

PairClassifier train_pair_classifier(std::span<const double> samples_i,
                                     std::span<const double> samples_j, Feature feature,
                                     const std::string& id_i, const std::string& id_j) {
    if (samples_i.empty() || samples_j.empty())
        throw InvalidInputError("train_pair_classifier: both sample sets must be nonempty");
    auto stats = [](std::span<const double> s, double& mean, double& sd) {
        mean = 0.0;
        for (double x : s) mean += x;
        mean /= static_cast<double>(s.size());
        double var = 0.0;
        for (double x : s) var += (x - mean) * (x - mean);
        sd = s.size() > 1 ? std::sqrt(var / static_cast<double>(s.size() - 1)) : 0.0;
    };
    PairClassifier c;
    c.node_i = id_i;
    c.node_j = id_j;
    c.feature = feature;
    stats(samples_i, c.mean_i, c.std_i);
    stats(samples_j, c.mean_j, c.std_j);
    c.threshold = (c.mean_i + c.mean_j) / 2.0;
    c.orientation = c.mean_i <= c.mean_j ? 1 : -1;
    c.zero_margin = c.mean_i == c.mean_j;
    return c;
}

double measure_advantage(const PairClassifier& c, std::span<const double> samples_i,
                         std::span<const double> samples_j) {
    if (samples_i.empty() || samples_j.empty())
        throw InvalidInputError("measure_advantage: need at least one sample per class");
    auto frac_label = [&](std::span<const double> s, int want) {
        std::size_t hit = 0;
        for (double x : s)
            if (c.classify(x) == want) ++hit;
        return static_cast<double>(hit) / static_cast<double>(s.size());
    };
    const double ci = frac_label(samples_i, 0);  // node_i samples labeled 0
    const double cj = frac_label(samples_j, 1);  // node_j samples labeled 0-bar
    // four ordered source pairs, each scored by the expected fraction of
    // correctly labeled positions in its pattern
    const double t_ii = ci;
    const double t_ij = 0.5 * (ci + cj);
    const double t_ji = 0.5 * (cj + ci);
    const double t_jj = cj;
    return 0.25 * (t_ii + t_ij + t_ji + t_jj);
}

GeneralizedDecision generalized_classifier(std::span<const PairClassifier> candidates,
                                           std::span<const double> features) {
    if (candidates.empty())
        throw InvalidInputError("generalized_classifier: need at least one candidate");
    auto log_mix = [](const PairClassifier& c, double x) {
        auto log_gauss = [](double v, double mean, double sd) {
            const double s = std::max(sd, 1e-6);
            const double z = (v - mean) / s;
            return -0.5 * z * z - std::log(s);
        };
        const double a = log_gauss(x, c.mean_i, c.std_i);
        const double b = log_gauss(x, c.mean_j, c.std_j);
        const double hi = std::max(a, b);
        return hi + std::log(0.5 * std::exp(a - hi) + 0.5 * std::exp(b - hi));
    };
    std::size_t best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        double ll = 0.0;
        for (double x : features) ll += log_mix(candidates[k], x);
        if (ll > best_ll) {
            best_ll = ll;
            best = k;
        }
    }
    GeneralizedDecision out;
    out.selected = best;
    out.labels.reserve(features.size());
    for (double x : features) out.labels.push_back(candidates[best].classify(x));
    return out;
}

TrainingSet collect_training_data(const BusContext& bus, const std::string& ecu_id,
                                  std::size_t n_bits, uint64_t seed) {
    bus.validate();
    const std::size_t node = bus.node_index(ecu_id);
    TrainingSet set;
    set.ecu_id = ecu_id;
    set.sample_rate_hz = bus.sample_rate_hz;
    set.bit_period_ns = bus.bit_period_ns;
    if (n_bits == 0) return set;

    // single-transmitter frames: the triggered ECU sends random payloads on
    // a schedule the collector knows, everyone else sits recessive
    Rng payload_rng(derive_seed(seed, 0xDA7A));
    std::size_t frame_idx = 0;
    while (set.bit_samples.size() < n_bits) {
        std::vector<uint8_t> payload(64);
        for (auto& b : payload) b = payload_rng.bernoulli(0.5) ? 1 : 0;

        // transmitted stream: header + payload + crc, stuffed
        std::vector<uint8_t> content = pns_header_bits(kDefaultPnsHeaderId, 8);
        content.insert(content.end(), payload.begin(), payload.end());
        const auto crc_bits = crc15_bits(crc15(content));
        content.insert(content.end(), crc_bits.begin(), crc_bits.end());
        const auto stuffed = bit_stuff(content);

        std::vector<int> payload_positions;  // stuffed indices of payload bits
        {
            std::size_t unstuffed = 0;
            int run_bit = -1, run = 0;
            bool expect_stuff = false;
            for (std::size_t k = 0; k < stuffed.size(); ++k) {
                const uint8_t b = stuffed[k];
                if (expect_stuff) {
                    expect_stuff = false;
                    run_bit = b;
                    run = 1;
                    continue;
                }
                if (unstuffed >= kHeaderBits && unstuffed < kHeaderBits + 64)
                    payload_positions.push_back(static_cast<int>(k));
                ++unstuffed;
                if (static_cast<int>(b) == run_bit) {
                    if (++run == 5) expect_stuff = true;
                } else {
                    run_bit = b;
                    run = 1;
                }
            }
        }

        FrameSchedule sched;
        sched.t0_ns = 0.0;
        sched.bit_period_ns = bus.bit_period_ns;
        Rng dither_rng(derive_seed(seed, 0xD17 + frame_idx));
        std::size_t tx_base = 0;
        for (std::size_t n = 0; n < bus.nodes.size(); ++n) {
            const bool is_tx = n == node;
            std::vector<TransceiverProfile> profs{bus.nodes[n].profile};
            if (is_tx && bus.policies.multi_transceiver)
                profs = multi_transceiver_hardware(bus.nodes[n].profile, bus.nodes[n].id,
                                                   *bus.policies.multi_transceiver);
            if (is_tx) tx_base = sched.entries.size();
            for (const auto& prof : profs) {
                TransceiverSchedule ts;
                ts.topo_index = bus.nodes[n].topo_index;
                ts.profile = prof;
                ts.bits.assign(stuffed.size(), BitPlan(TransceiverState::Recessive, 0.0));
                sched.entries.push_back(std::move(ts));
            }
        }
        const std::size_t n_tx =
            bus.policies.multi_transceiver ? bus.policies.multi_transceiver->count : 1;
        double frame_bias = 0.0;
        if (bus.nodes[node].frame_jitter_ns > 0.0)
            frame_bias = dither_rng.gaussian(0.0, bus.nodes[node].frame_jitter_ns);
        for (std::size_t k = 0; k < stuffed.size(); ++k) {
            double off = frame_bias;
            if (bus.nodes[node].sync_jitter_ns > 0.0)
                off += dither_rng.gaussian(0.0, bus.nodes[node].sync_jitter_ns);
            if (n_tx == 1) {
                sched.entries[tx_base].bits[k] = BitPlan(
                    stuffed[k] == 0 ? TransceiverState::Dominant : TransceiverState::Recessive,
                    off);
            } else {
                const auto states = multi_transceiver_states(n_tx, stuffed[k], dither_rng);
                for (std::size_t t = 0; t < n_tx; ++t)
                    sched.entries[tx_base + t].bits[k] = BitPlan(states[t], off);
            }
        }

        const TraceWindow trace = simulate_frame(sched, bus.topology, bus.noise_sigma_v,
                                                 derive_seed(seed, 0x7704CE + frame_idx),
                                                 bus.sample_rate_hz);
        const std::size_t per_bit =
            static_cast<std::size_t>(bus.bit_period_ns / trace.sample_period_ns());
        for (int sk : payload_positions) {
            if (set.bit_samples.size() >= n_bits) break;
            const double start = static_cast<double>(sk) * bus.bit_period_ns;
            const auto idx0 = static_cast<std::size_t>((start - trace.t0_ns) / trace.sample_period_ns());
            if (idx0 + per_bit > trace.samples.size()) continue;
            set.bit_samples.emplace_back(trace.samples.begin() + static_cast<long>(idx0),
                                         trace.samples.begin() + static_cast<long>(idx0 + per_bit));
            set.bit_start_ns.push_back(start);
        }
        ++frame_idx;
    }
    return set;
}

namespace {
// Estimates interpolated from 8 ns samples carry no sub-picosecond
// information; quantizing strips float path noise so that physically
// identical observations compare equal.
inline double quantize_ns(double v) { return std::round(v * 1e3) / 1e3; }
inline double quantize_v(double v) { return std::round(v * 1e9) / 1e9; }
}  // namespace

std::vector<double> extract_feature(const TrainingSet& set, Feature feature,
                                    double logic_threshold_v) {
    std::vector<double> out;
    const double dt = 1e9 / set.sample_rate_hz;
    for (std::size_t b = 0; b < set.bit_samples.size(); ++b) {
        const auto& s = set.bit_samples[b];
        if (s.size() < 8) continue;
        const std::size_t tail0 = s.size() * 6 / 10;
        const std::size_t tail1 = s.size() * 92 / 100;
        double post = 0.0;
        for (std::size_t i = tail0; i < tail1; ++i) post += s[i];
        post /= static_cast<double>(tail1 - tail0);

        if (feature == Feature::SteadyVoltage) {
            if (post > logic_threshold_v) out.push_back(quantize_v(post));
            continue;
        }
        // need a rising edge from recessive within the window
        if (!(post > logic_threshold_v) || !(s.front() < logic_threshold_v)) continue;
        auto crossing = [&](double level) -> double {
            for (std::size_t i = 1; i < s.size(); ++i) {
                if (s[i - 1] <= level && s[i] > level) {
                    const double frac = (level - s[i - 1]) / (s[i] - s[i - 1]);
                    return (static_cast<double>(i - 1) + frac) * dt;
                }
            }
            return -1.0;
        };
        const double t50 = crossing(post * 0.5);
        if (t50 < 0.0) continue;
        if (feature == Feature::TransitionOffset) {
            out.push_back(quantize_ns(t50));
            continue;
        }
        const double t90 = crossing(post * 0.9);
        if (t90 < 0.0 || t90 <= t50) continue;
        out.push_back(quantize_ns((t90 - t50) / std::log(5.0)));  // TransientTau
    }
    return out;
}

// ---------------------------------------------------------------------------
// Timing attack
// ---------------------------------------------------------------------------

namespace {

enum class EdgeKind { None, Rise, Fall };
enum class GlitchKind { None, Dip, Bump };

struct BoundaryFacts {
    EdgeKind edge = EdgeKind::None;
    int edge_label = -1;  // absolute: 0 primary, 1 secondary
    GlitchKind glitch = GlitchKind::None;
    int step_label = -1;          // label of the device toggling a level step
    double step_delta_v = 0.0;    // post - pre steady level
    int owner_abs = 0;            // absolute identity of the sync owner here
};

struct StuffedBit {
    int value = 1;
    bool is_stuff = false;
    double level = 0.0;
};

}  // namespace

AttackResult timing_attack(const TraceWindow& trace, double bit_period_ns,
                           const AttackParams& params) {
    trace.validate();
    const auto events = detect_transitions(trace, params.trigger_v, bit_period_ns / 2.0);

    // synchronize to the start of frame: first recessive-to-dominant edge
    std::size_t sof_ev = events.size();
    for (std::size_t e = 0; e < events.size(); ++e) {
        if (events[e].rising && events[e].pre_level_v < params.logic_threshold_v &&
            events[e].post_level_v > params.logic_threshold_v) {
            sof_ev = e;
            break;
        }
    }
    if (sof_ev == events.size())
        throw InvalidInputError("timing_attack: no start-of-frame transition in trace");

    double origin = events[sof_ev].time_ns;
    const double dt = trace.sample_period_ns();

    auto steady_level = [&](std::size_t k) {
        const double a = origin + (static_cast<double>(k) + 0.62) * bit_period_ns;
        const double b = origin + (static_cast<double>(k) + 0.92) * bit_period_ns;
        std::size_t ia = static_cast<std::size_t>(std::max(0.0, (a - trace.t0_ns) / dt));
        std::size_t ib = static_cast<std::size_t>(std::max(0.0, (b - trace.t0_ns) / dt));
        ib = std::min(ib, trace.samples.size());
        if (ia >= ib) return 0.0;
        double acc = 0.0;
        for (std::size_t i = ia; i < ib; ++i) acc += trace.samples[i];
        return acc / static_cast<double>(ib - ia);
    };

    // --- header pass: single transmitter, learn its timing statistics ---
    std::vector<double> rise_offsets, fall_offsets, all_offsets;
    std::vector<StuffedBit> header_bits;
    std::vector<int> header_unstuffed;
    {
        int run_bit = -1, run = 0;
        bool expect_stuff = false;
        std::size_t k = 0;
        while (header_unstuffed.size() < kHeaderBits && k < 64) {
            StuffedBit sb;
            sb.level = steady_level(k);
            sb.value = sb.level > params.logic_threshold_v ? 0 : 1;
            if (expect_stuff) {
                sb.is_stuff = true;
                expect_stuff = false;
                run_bit = sb.value;
                run = 1;
            } else {
                header_unstuffed.push_back(sb.value);
                if (sb.value == run_bit) {
                    if (++run == 5) expect_stuff = true;
                } else {
                    run_bit = sb.value;
                    run = 1;
                }
            }
            header_bits.push_back(sb);
            ++k;
        }
        const double header_end = origin + static_cast<double>(k) * bit_period_ns;
        for (std::size_t e = sof_ev + 1; e < events.size(); ++e) {
            if (events[e].time_ns >= header_end - 0.5 * bit_period_ns) break;
            const double kk = std::round((events[e].time_ns - origin) / bit_period_ns);
            const double off = events[e].time_ns - (origin + kk * bit_period_ns);
            all_offsets.push_back(off);
            (events[e].rising ? rise_offsets : fall_offsets).push_back(off);
        }
    }
    AttackResult result;
    result.sync = estimate_sync_params(all_offsets, params.sigma_mult, params.eps_ns);
    // per-direction thresholds: rise and fall transients differ, so each
    // edge class is compared against its own header statistics
    auto dir_params = [&](const std::vector<double>& offs) {
        if (offs.size() >= 2) return estimate_sync_params(offs, params.sigma_mult, params.eps_ns);
        SyncParams p = result.sync;
        if (offs.size() == 1) {
            p.mu_ns = offs[0];
            p.tau_ns = offs[0] + params.sigma_mult * std::max(p.sigma_ns, params.eps_ns);
        }
        return p;
    };
    const SyncParams sync_rise = dir_params(rise_offsets);
    const SyncParams sync_fall = dir_params(fall_offsets);

    // payload extent from the decoded header
    unsigned dlc = 0;
    for (int i = 15; i < 19; ++i) dlc = dlc * 2 + static_cast<unsigned>(header_unstuffed[i]);
    if (dlc == 0 || dlc > 8) throw InvalidInputError("timing_attack: bad DLC in decoded header");
    const std::size_t payload_bits = dlc * 8;

    // --- payload pass ---
    const std::size_t header_stuffed = header_bits.size();
    std::vector<StuffedBit> bits = header_bits;     // stuffed order, from SOF
    std::vector<BoundaryFacts> facts(header_stuffed);  // facts[k]: boundary into bit k
    std::vector<int> payload_stuffed_idx;            // stuffed index per unstuffed payload bit

    int owner_abs = 0;  // sync owner in absolute identity (0 = primary)
    {
        // rebuild the stuffing run state at the header/payload boundary
        int run_bit = -1, run = 0;
        bool expect_stuff = false;
        for (const auto& sb : bits) {
            if (expect_stuff) {
                expect_stuff = false;
                run_bit = sb.value;
                run = 1;
                continue;
            }
            if (sb.value == run_bit) {
                if (++run == 5) expect_stuff = true;
            } else {
                run_bit = sb.value;
                run = 1;
            }
        }

        std::size_t ev = sof_ev + 1;
        std::size_t k = header_stuffed;
        while (payload_stuffed_idx.size() < payload_bits &&
               origin + (static_cast<double>(k) + 1.2) * bit_period_ns < trace.end_ns()) {
            StuffedBit sb;
            sb.level = steady_level(k);
            sb.value = sb.level > params.logic_threshold_v ? 0 : 1;
            BoundaryFacts bf;
            bf.owner_abs = owner_abs;

            // boundary event into bit k
            const double boundary = origin + static_cast<double>(k) * bit_period_ns;
            while (ev < events.size() && events[ev].time_ns < boundary - 0.5 * bit_period_ns) ++ev;
            const bool logic_edge_expected = bits[k - 1].value != sb.value;
            if (ev < events.size() && events[ev].time_ns < boundary + 0.5 * bit_period_ns &&
                logic_edge_expected) {
                const auto& e = events[ev];
                const bool crosses_logic =
                    (e.pre_level_v - params.logic_threshold_v) *
                        (e.post_level_v - params.logic_threshold_v) < 0.0;
                if (crosses_logic && e.rising == (sb.value == 0)) {
                    const double off = e.time_ns - boundary;
                    const SyncParams& sp = e.rising ? sync_rise : sync_fall;
                    const bool is_owner = off <= sp.tau_ns;
                    bf.edge = e.rising ? EdgeKind::Rise : EdgeKind::Fall;
                    bf.edge_label = is_owner ? owner_abs : 1 - owner_abs;
                    if (e.rising && params.expect_resync) {
                        if (!is_owner) {
                            // soft resynchronization: the other node took the
                            // bus first; adopt its clock and swap roles
                            owner_abs = 1 - owner_abs;
                            ++result.resync_count;
                        }
                        origin = e.time_ns - sp.mu_ns - static_cast<double>(k) * bit_period_ns;
                    } else if (e.rising && is_owner) {
                        // fixed roles: track the reference grid only
                        origin = e.time_ns - sp.mu_ns - static_cast<double>(k) * bit_period_ns;
                    }
                    ++ev;
                }
            }

            // boundary cues inside a dominant run: handoff glitch or level step
            if (!logic_edge_expected && sb.value == 0 && bits[k - 1].value == 0) {
                const double pre = bits[k - 1].level;
                const double post = sb.level;
                const double w0 = boundary - 0.25 * bit_period_ns;
                const double w1 = boundary + 0.55 * bit_period_ns;
                std::size_t ia = static_cast<std::size_t>(std::max(0.0, (w0 - trace.t0_ns) / dt));
                std::size_t ib = static_cast<std::size_t>(std::max(0.0, (w1 - trace.t0_ns) / dt));
                ib = std::min(ib, trace.samples.size());
                double vmin = 1e9, vmax = -1e9;
                for (std::size_t i = ia + 1; i + 1 < ib; ++i) {
                    const double v =
                        (trace.samples[i - 1] + trace.samples[i] + trace.samples[i + 1]) / 3.0;
                    vmin = std::min(vmin, v);
                    vmax = std::max(vmax, v);
                }
                const double lo_ref = std::min(pre, post);
                const double hi_ref = std::max(pre, post);
                if (vmin < lo_ref - params.glitch_v)
                    bf.glitch = GlitchKind::Dip;
                else if (vmax > hi_ref + params.glitch_v)
                    bf.glitch = GlitchKind::Bump;
                bf.step_delta_v = post - pre;
                if (bf.glitch == GlitchKind::None &&
                    std::abs(bf.step_delta_v) > params.level_step_v) {
                    // level step without a glitch: time the mid crossing
                    const double mid = (pre + post) / 2.0;
                    const bool up = post > pre;
                    for (std::size_t i = ia + 1; i < ib; ++i) {
                        const bool crossed = up
                            ? (trace.samples[i - 1] <= mid && trace.samples[i] > mid)
                            : (trace.samples[i - 1] >= mid && trace.samples[i] < mid);
                        if (crossed) {
                            const double frac =
                                (mid - trace.samples[i - 1]) / (trace.samples[i] - trace.samples[i - 1]);
                            const double t_step = trace.time_at(i - 1) + frac * dt;
                            const double off = t_step - boundary;
                            const SyncParams& sp = up ? sync_rise : sync_fall;
                            bf.step_label = off <= sp.tau_ns ? owner_abs : 1 - owner_abs;
                            break;
                        }
                    }
                }
            }

            // destuff bookkeeping
            if (expect_stuff) {
                sb.is_stuff = true;
                expect_stuff = false;
                run_bit = sb.value;
                run = 1;
            } else {
                payload_stuffed_idx.push_back(static_cast<int>(k));
                if (sb.value == run_bit) {
                    if (++run == 5) expect_stuff = true;
                } else {
                    run_bit = sb.value;
                    run = 1;
                }
            }
            bits.push_back(sb);
            facts.push_back(bf);
            ++k;
        }
    }
    if (payload_stuffed_idx.size() < payload_bits)
        throw InvalidInputError("timing_attack: trace ended before the payload completed");

    // --- per-pair resolution ---
    const std::size_t n_pairs = payload_bits / 2;
    result.pair_key_bits.assign(n_pairs, -1);
    result.pair_is_secret.assign(n_pairs, 0);
    result.pair_erased.assign(n_pairs, 0);
    result.pair_cue.assign(n_pairs, PairCue::Erased);
    result.bit_labels.assign(payload_bits, -1);

    auto value_at_stuffed = [&](std::size_t k) { return bits.at(k).value; };
    auto facts_at = [&](std::size_t k) -> const BoundaryFacts& { return facts.at(k); };

    for (std::size_t p = 0; p < n_pairs; ++p) {
        const std::size_t s1 = static_cast<std::size_t>(payload_stuffed_idx[2 * p]);
        const std::size_t s2 = static_cast<std::size_t>(payload_stuffed_idx[2 * p + 1]);
        const int b1 = value_at_stuffed(s1);
        const int b2 = value_at_stuffed(s2);
        if (!(b1 == 0 && b2 == 0)) continue;  // bits agree: no secret here
        result.pair_is_secret[p] = 1;
        ++result.secret_pairs;

        int d1 = -1;  // absolute driver of the first (non-inverted) bit
        PairCue cue = PairCue::Erased;
        // (a) fresh rising edge into the first bit
        if (facts_at(s1).edge == EdgeKind::Rise) {
            d1 = facts_at(s1).edge_label;
            cue = PairCue::RiseIntoFirst;
        }
        // (b) handoff glitch at the intra-pair boundary: a dip means the
        // early (sync-owner) node released first, a rise/bump means the
        // other node was still driving when the owner asserted
        if (d1 < 0 && s2 == s1 + 1) {
            const auto& bf = facts_at(s2);
            if (bf.glitch == GlitchKind::Dip) d1 = bf.owner_abs;
            else if (bf.glitch == GlitchKind::Bump) d1 = 1 - bf.owner_abs;
            if (d1 >= 0) cue = PairCue::HandoffGlitch;
        }
        // stuff bit between the pair: its edges classify the second bit
        if (d1 < 0 && s2 != s1 + 1 && facts_at(s2).edge == EdgeKind::Rise) {
            d1 = 1 - facts_at(s2).edge_label;
            cue = PairCue::RiseAfterStuff;
        }
        // (c) falling edge right after the second bit names its releaser
        if (d1 < 0 && s2 + 1 < facts.size() && facts_at(s2 + 1).edge == EdgeKind::Fall) {
            d1 = 1 - facts_at(s2 + 1).edge_label;
            cue = PairCue::FallAfterSecond;
        }
        // (d) level step entering the first bit: one of two simultaneous
        // drivers released; the release time names it
        if (d1 < 0 && facts_at(s1).step_label >= 0 && facts_at(s1).step_delta_v < 0.0) {
            d1 = 1 - facts_at(s1).step_label;
            cue = PairCue::StepIntoFirst;
        }
        // (e) level step after the second bit: a second driver joined;
        // the join time names the first bit's driver
        if (d1 < 0 && s2 + 1 < facts.size() && facts_at(s2 + 1).step_label >= 0 &&
            facts_at(s2 + 1).step_delta_v > 0.0) {
            d1 = facts_at(s2 + 1).step_label;
            cue = PairCue::StepAfterSecond;
        }
        result.pair_cue[p] = cue;

        if (d1 < 0) {
            result.pair_erased[p] = 1;  // decline rather than guess
            ++result.erasures;
            continue;
        }
        result.pair_key_bits[p] = d1 == 0 ? 0 : 1;
        result.bit_labels[2 * p] = d1;
        result.bit_labels[2 * p + 1] = 1 - d1;
    }
    return result;
}

}  // namespace pnscan

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pnscan/protocol.hpp"
#include "pnscan/waveform.hpp"

namespace pnscan {

/// A detected logic-level transition; time_ns is the linearly interpolated
/// 50% crossing between the flanking steady levels.
struct TransitionEvent {
    double time_ns = 0.0;
    bool rising = false;
    double pre_level_v = 0.0;
    double post_level_v = 0.0;
};

/// Scans for changes greater than trigger_v that settle into a steady
/// level held for at least steady_min_ns (default: half a bit). Brief
/// glitches are not transitions. Empty result on a flat trace.
/// trigger_v should sit well above the noise floor (>= 5 sigma).
std::vector<TransitionEvent> detect_transitions(const TraceWindow& trace, double trigger_v,
                                                double steady_min_ns = -1.0);

/// Expected variation of the reference node's transition times, estimated
/// from the single-transmitter header, plus the decision threshold
/// tau = mu + sigma_mult * max(sigma, eps).
struct SyncParams {
    double mu_ns = 0.0;
    double sigma_ns = 0.0;
    double tau_ns = 0.0;
};

SyncParams estimate_sync_params(std::span<const double> header_offsets, double sigma_mult = 3.0,
                                double eps_ns = 1.0);
SyncParams estimate_sync_params(std::span<const TransitionEvent> header_events, double grid_t0_ns,
                                double bit_period_ns, double sigma_mult = 3.0, double eps_ns = 1.0);

/// 1-D feature the pairwise distinguishers operate on.
enum class Feature { TransitionOffset, SteadyVoltage, TransientTau };

/// Threshold distinguisher between two nodes on one feature; orientation
/// fixes which side maps to the "0" label (node_i).
struct PairClassifier {
    std::string node_i;
    std::string node_j;
    Feature feature = Feature::TransitionOffset;
    double threshold = 0.0;
    int orientation = 1;  // +1: feature below threshold -> node_i
    bool zero_margin = false;
    double mean_i = 0.0, std_i = 0.0;
    double mean_j = 0.0, std_j = 0.0;

    /// 0 = node_i side, 1 = node_j side.
    int classify(double x) const {
        const bool low = x < threshold || (x == threshold && orientation > 0);
        return (orientation > 0) == low ? 0 : 1;
    }
};

PairClassifier train_pair_classifier(std::span<const double> samples_i,
                                     std::span<const double> samples_j, Feature feature,
                                     const std::string& id_i = "i", const std::string& id_j = "j");

/// Adversarial advantage of a trained distinguisher: the average over the
/// four equiprobable ordered source pairs of the probability that the
/// emitted label pattern is correct. 0.5 is chance; 1.0 is perfect.
double measure_advantage(const PairClassifier& c, std::span<const double> samples_i,
                         std::span<const double> samples_j);

inline double oriented_advantage(double d) { return d > 0.5 ? d : 1.0 - d; }

/// Maximum-likelihood selection among candidate pair classifiers when the
/// participating pair is unknown, then application of the winner.
struct GeneralizedDecision {
    std::size_t selected = 0;
    std::vector<int> labels;
};
GeneralizedDecision generalized_classifier(std::span<const PairClassifier> candidates,
                                           std::span<const double> features);

/// Labeled raw observations: k voltage samples per bit plus the nominal
/// transmission grid they were captured against.
struct TrainingSet {
    std::string ecu_id;
    double sample_rate_hz = 125e6;
    double bit_period_ns = 2000.0;
    std::vector<std::vector<double>> bit_samples;
    std::vector<double> bit_start_ns;  // nominal start per captured bit
};

/// Triggers single-transmitter frames from a known ECU and records every
/// payload bit window. Deterministic for a given seed.
TrainingSet collect_training_data(const BusContext& bus, const std::string& ecu_id,
                                  std::size_t n_bits, uint64_t seed);

/// Per-bit 1-D feature values; bits without the feature (e.g. no edge in
/// the window) are skipped.
std::vector<double> extract_feature(const TrainingSet& set, Feature feature,
                                    double logic_threshold_v = 0.9);

struct AttackParams {
    double trigger_v = 0.3;
    double glitch_v = 0.06;
    double level_step_v = 0.08;
    double logic_threshold_v = 0.9;
    double sigma_mult = 3.0;
    // floor for the threshold spread: one 125 MS/s sample period; the
    // interpolated crossing shifts by up to that much when a second
    // driver reshapes the edge
    double eps_ns = 8.0;
    // whether the attacked controllers follow recessive-to-dominant edges
    // with a resynchronization (learned offline from regular traffic);
    // when false, roles stay fixed and off-grid edges are just the other
    // node being late
    bool expect_resync = true;
    uint16_t expected_header_id = kDefaultPnsHeaderId;
};

/// Outcome of the timing attack on one frame trace. pair_key_bits holds
/// the estimate per payload pair: 0/1, or -1 for a non-secret pair, with
/// erasure mask set where the attack declined to label a secret pair.
/// Which rule labeled a secret pair (diagnostic, mirrored in reports).
enum class PairCue : int8_t {
    Erased = -1,
    RiseIntoFirst = 0,
    HandoffGlitch = 1,
    RiseAfterStuff = 2,
    FallAfterSecond = 3,
    StepIntoFirst = 4,
    StepAfterSecond = 5,
};

struct AttackResult {
    std::vector<int> pair_key_bits;
    std::vector<uint8_t> pair_is_secret;
    std::vector<uint8_t> pair_erased;
    std::vector<PairCue> pair_cue;
    std::vector<int> bit_labels;  // per unstuffed payload bit: 0 primary, 1 secondary, -1 n/a
    SyncParams sync;
    std::size_t resync_count = 0;
    std::size_t secret_pairs = 0;
    std::size_t erasures = 0;
};

/// Probing attack on one PnS frame: synchronizes to the start of frame,
/// learns the reference node's timing from the header, then labels each
/// changed bit by its transition offset and each unchanged bit by the
/// boundary dip/rise and mid-bit level cues, re-synchronizing whenever the
/// other node triggers a recessive-to-dominant edge.
AttackResult timing_attack(const TraceWindow& trace, double bit_period_ns,
                           const AttackParams& params);

}  // namespace pnscan

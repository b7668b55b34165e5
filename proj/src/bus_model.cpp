#include "pnscan/bus_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace pnscan {

void TransceiverProfile::validate() const {
    if (!(canh_dominant_v > canl_dominant_v))
        throw InvalidInputError("profile: canh_dominant_v must exceed canl_dominant_v");
    if (!(drive_conductance_s > 0.0))
        throw InvalidInputError("profile: drive_conductance_s must be > 0");
    if (load_conductance_s < 0.0)
        throw InvalidInputError("profile: load_conductance_s must be >= 0");
    if (!(rise_tau_ns > 0.0) || !(fall_tau_ns > 0.0))
        throw InvalidInputError("profile: transient time constants must be > 0");
}

double Topology::effective_length_m() const {
    if (bus_length_m > 0.0) return bus_length_m;
    double len = observer_position_m;
    for (double p : node_positions_m) len = std::max(len, p);
    return len;
}

double Topology::propagation_delay_ns(std::size_t node_index) const {
    return propagation_delay_from_ns(node_positions_m.at(node_index));
}

double Topology::propagation_delay_from_ns(double position_m) const {
    return std::abs(position_m - observer_position_m) * propagation_ns_per_m;
}

void Topology::validate() const {
    if (!(propagation_ns_per_m > 0.0))
        throw InvalidInputError("topology: propagation_ns_per_m must be > 0");
    if (cable_resistance_ohm_per_m < 0.0)
        throw InvalidInputError("topology: cable_resistance_ohm_per_m must be >= 0");
    const double len = effective_length_m();
    auto in_range = [&](double p) { return p >= -1e-9 && p <= len + 1e-9; };
    for (double p : node_positions_m)
        if (!in_range(p)) throw InvalidInputError("topology: node position outside [0, bus_length]");
    if (!in_range(observer_position_m))
        throw InvalidInputError("topology: observer position outside [0, bus_length]");
}

int logical_bus_value(std::span<const TransceiverState> states) {
    if (states.empty()) throw InvalidInputError("logical_bus_value: empty state list");
    for (TransceiverState s : states)
        if (s == TransceiverState::Dominant) return 0;
    return 1;
}

bool solve_dense_linear(std::vector<double> a, std::vector<double> b,
                        std::size_t n, std::vector<double>& x, double eps) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (std::abs(a[pivot * n + col]) < eps) return false;
        if (pivot != col) {
            for (std::size_t c = col; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
        }
        const double d = a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / d;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t ri = n; ri-- > 0;) {
        double acc = b[ri];
        for (std::size_t c = ri + 1; c < n; ++c) acc -= a[ri * n + c] * x[c];
        x[ri] = acc / a[ri * n + ri];
    }
    return true;
}

namespace {

constexpr double kPositionEps = 1e-9;

// Electrical node index for a position: entities closer than kPositionEps
// merge, and a zero-resistance cable collapses the whole bus to one node.
struct NodeMap {
    std::vector<double> positions;  // sorted distinct electrical positions
    bool single_node = false;

    std::size_t index_of(double p) const {
        if (single_node) return 0;
        auto it = std::lower_bound(positions.begin(), positions.end(), p - kPositionEps);
        return static_cast<std::size_t>(it - positions.begin());
    }
};

NodeMap build_node_map(const std::vector<double>& raw, bool zero_resistance) {
    NodeMap m;
    if (zero_resistance) {
        m.single_node = true;
        m.positions = {0.0};
        return m;
    }
    std::vector<double> sorted = raw;
    std::sort(sorted.begin(), sorted.end());
    for (double p : sorted) {
        if (m.positions.empty() || p - m.positions.back() > kPositionEps)
            m.positions.push_back(p);
    }
    return m;
}

}  // namespace

double resolve_steady_state(std::span<const TransceiverState> states,
                            std::span<const TransceiverProfile> profiles,
                            const Topology& topology) {
    if (states.empty()) throw InvalidInputError("resolve_steady_state: empty state list");
    if (states.size() != profiles.size())
        throw InvalidInputError("resolve_steady_state: states/profiles length mismatch");
    if (states.size() != topology.node_positions_m.size())
        throw InvalidInputError("resolve_steady_state: states/topology length mismatch");
    topology.validate();

    const double len = topology.effective_length_m();
    const bool zero_r = topology.cable_resistance_ohm_per_m <= 0.0;
    const bool term_low = topology.termination_ohms[0] > 0.0;
    const bool term_high = topology.termination_ohms[1] > 0.0;

    std::vector<double> raw;
    raw.reserve(states.size() + 3);
    for (double p : topology.node_positions_m) raw.push_back(p);
    raw.push_back(topology.observer_position_m);
    if (term_low) raw.push_back(0.0);
    if (term_high) raw.push_back(len);

    const NodeMap nm = build_node_map(raw, zero_r);
    const std::size_t n = nm.positions.size();
    std::vector<double> g(n * n, 0.0), rhs(n, 0.0);

    // cable segments between adjacent electrical positions
    if (!nm.single_node) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double seg_r =
                topology.cable_resistance_ohm_per_m * (nm.positions[i + 1] - nm.positions[i]);
            const double gc = 1.0 / seg_r;
            g[i * n + i] += gc;
            g[(i + 1) * n + (i + 1)] += gc;
            g[i * n + (i + 1)] -= gc;
            g[(i + 1) * n + i] -= gc;
        }
    }
    if (term_low) {
        const std::size_t k = nm.index_of(0.0);
        g[k * n + k] += 1.0 / topology.termination_ohms[0];
    }
    if (term_high) {
        const std::size_t k = nm.index_of(len);
        g[k * n + k] += 1.0 / topology.termination_ohms[1];
    }
    for (std::size_t i = 0; i < states.size(); ++i) {
        const std::size_t k = nm.index_of(topology.node_positions_m[i]);
        switch (states[i]) {
            case TransceiverState::Dominant:
                g[k * n + k] += profiles[i].drive_conductance_s;
                rhs[k] += profiles[i].drive_conductance_s * profiles[i].dominant_emf_v();
                break;
            case TransceiverState::Recessive:
                g[k * n + k] += profiles[i].load_conductance_s;
                break;
            case TransceiverState::Isolated:
                break;
        }
    }

    std::vector<double> v;
    if (!solve_dense_linear(std::move(g), std::move(rhs), n, v))
        throw DegenerateNetworkError("resolve_steady_state: no conductance path (floating network)");
    return v[nm.index_of(topology.observer_position_m)];
}

}  // namespace pnscan

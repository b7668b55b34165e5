#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pnscan/errors.hpp"

namespace pnscan {

/// Electrical state of one transceiver during a bit.
/// Isolated is the tri-state cutoff mode: the device is neither a driver
/// nor a load; logically it reads as recessive.
enum class TransceiverState : uint8_t { Dominant = 0, Recessive = 1, Isolated = 2 };

/// Electrical parameters of one CAN driver. Voltages are line levels while
/// asserting a dominant bit; conductances model the device as a Norton
/// source (dominant) or a passive sink (recessive). Transient time
/// constants shape the exponential edge of the differential signal.
struct TransceiverProfile {
    double canh_dominant_v = 3.5;
    double canl_dominant_v = 1.5;
    double drive_conductance_s = 0.04;   // source strength when dominant
    double load_conductance_s = 2.0e-4;  // passive sink when recessive
    double rise_tau_ns = 40.0;
    double fall_tau_ns = 60.0;
    double supply_v = 5.0;

    double dominant_emf_v() const { return canh_dominant_v - canl_dominant_v; }
    void validate() const;
};

/// Linear bus geometry. Positions are meters from the bus start; the two
/// termination resistors sit at 0 and bus_length_m. A termination entry
/// <= 0 means "no termination at that end". bus_length_m <= 0 means
/// "auto": the far end is the largest position present.
struct Topology {
    std::vector<double> node_positions_m;
    double observer_position_m = 0.0;
    double bus_length_m = -1.0;
    double propagation_ns_per_m = 5.0;
    double cable_resistance_ohm_per_m = 0.05;
    std::array<double, 2> termination_ohms = {120.0, 120.0};

    double effective_length_m() const;
    double propagation_delay_ns(std::size_t node_index) const;
    double propagation_delay_from_ns(double position_m) const;
    void validate() const;
};

/// Wired-AND logic level of the bus: 0 iff any transceiver drives dominant.
/// Isolated devices read as recessive.
int logical_bus_value(std::span<const TransceiverState> states);

/// DC nodal-analysis solution of the resistive bus network; returns the
/// differential voltage at the observer position. Dominant nodes stamp a
/// Norton source, recessive nodes a shunt load, isolated nodes nothing;
/// cable segments are series resistances, terminations shunt resistors.
/// Throws DegenerateNetworkError if the network is floating.
double resolve_steady_state(std::span<const TransceiverState> states,
                            std::span<const TransceiverProfile> profiles,
                            const Topology& topology);

/// Gaussian elimination with partial pivoting on a dense row-major system.
/// Returns false (leaving x unspecified) when a pivot falls below eps.
/// Networks here have at most a few dozen unknowns, so dense is fine.
bool solve_dense_linear(std::vector<double> a, std::vector<double> b,
                        std::size_t n, std::vector<double>& x, double eps = 1e-12);

}  // namespace pnscan

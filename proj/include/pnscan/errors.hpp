#pragma once

#include <stdexcept>
#include <string>

namespace pnscan {

struct InvalidInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Resistive network has no conductance path to reference (floating bus).
struct DegenerateNetworkError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bit stream violates CAN stuffing (run of 6 identical bits inside the
// stuffed region).
struct FramingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Session hit the frame cap before harvesting the requested key bits.
struct ExhaustionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientHeaderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PolicyViolationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AuthorizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Advantage map lacks a weight for a requested pair.
struct IncompleteMapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NoSpanningTreeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scenario file malformed; message carries the offending field path.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pnscan

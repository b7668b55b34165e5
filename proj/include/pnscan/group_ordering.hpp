#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pnscan/protocol.hpp"

namespace pnscan {

/// Complete symmetric weighted graph of pairwise adversarial advantage
/// over a set of nodes. Weights live in [0,1]; generalized weights, when
/// present, never exceed the pairwise ones.
struct AdvantageGraph {
    std::vector<std::string> ids;
    std::vector<double> weights;  // dense row-major, -1 = missing
    std::vector<double> generalized;  // optional, same layout

    std::size_t size() const { return ids.size(); }
    double at(std::size_t i, std::size_t j) const { return weights[i * size() + j]; }
    void set(std::size_t i, std::size_t j, double w);
    std::size_t index_of(const std::string& id) const;
    void validate() const;
};

using PairAdvantageSource =
    std::function<std::optional<double>(const std::string&, const std::string&)>;

/// Induced complete subgraph over the group; every pair weight must be
/// available from the source (measured or configured).
AdvantageGraph build_advantage_graph(const std::vector<std::string>& group,
                                     const PairAdvantageSource& source);

/// Spanning tree with parent links and a session order in which every
/// non-root node follows its already-keyed parent.
struct OrderTree {
    std::vector<std::string> ids;
    std::vector<int> parent;          // -1 at the root
    int root = 0;
    std::vector<int> order;           // BFS from the root
    double max_edge_weight = 0.0;

    std::vector<std::pair<int, int>> edges() const;
};

/// Minimum spanning tree (Kruskal, ties broken by node-id pairs); every
/// MST minimizes the maximum edge weight over all spanning trees, which
/// is the ordering objective. Root: node with the smallest incident tree
/// weight sum.
OrderTree min_max_spanning_tree(const AdvantageGraph& graph);

/// Executes the group key agreement along the tree: each session pairs a
/// node with its already-keyed parent, K-1 sessions in total.
GroupResult run_group_key_tree(const BusContext& bus, const OrderTree& tree,
                               const std::map<std::string, std::vector<uint8_t>>& seeds,
                               const ProtocolParams& params, uint64_t seed);

/// Privacy-preserving order broadcast: nonce followed by one PRF token
/// per member, keyed by that member's gateway key.
struct MaskedOrder {
    std::vector<uint8_t> nonce;
    std::vector<std::array<uint8_t, 8>> tokens;
};

MaskedOrder mask_order(const std::vector<std::string>& order,
                       const std::map<std::string, std::vector<uint8_t>>& gateway_keys,
                       std::span<const uint8_t> nonce);

/// A member recomputes its token and finds its position; nullopt signals
/// that the key matches no token (not in the group).
std::optional<std::size_t> unmask_rank(const MaskedOrder& masked,
                                       std::span<const uint8_t> own_key);

/// Advantage matrix CSV: header row/column carry node ids.
void write_advantage_csv(std::ostream& out, const AdvantageGraph& graph);
AdvantageGraph read_advantage_csv(std::istream& in);

}  // namespace pnscan

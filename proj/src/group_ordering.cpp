#include "pnscan/group_ordering.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "pnscan/errors.hpp"
#include "pnscan/rng.hpp"

namespace pnscan {

void AdvantageGraph::set(std::size_t i, std::size_t j, double w) {
    weights[i * size() + j] = w;
    weights[j * size() + i] = w;
}

std::size_t AdvantageGraph::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return i;
    throw InvalidInputError("advantage graph: unknown node id '" + id + "'");
}

void AdvantageGraph::validate() const {
    const std::size_t n = size();
    if (weights.size() != n * n) throw InvalidInputError("advantage graph: bad weight matrix size");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double w = at(i, j);
            if (w < 0.0 || w > 1.0)
                throw IncompleteMapError("advantage graph: missing or out-of-range weight " +
                                         ids[i] + "-" + ids[j]);
            if (w != at(j, i)) throw InvalidInputError("advantage graph: asymmetric weights");
            if (!generalized.empty() && generalized[i * n + j] > w + 1e-9)
                throw InvalidInputError("advantage graph: generalized weight exceeds pairwise");
        }
    }
}

AdvantageGraph build_advantage_graph(const std::vector<std::string>& group,
                                     const PairAdvantageSource& source) {
    AdvantageGraph g;
    g.ids = group;
    g.weights.assign(group.size() * group.size(), -1.0);
    for (std::size_t i = 0; i < group.size(); ++i) {
        g.weights[i * group.size() + i] = 0.0;
        for (std::size_t j = i + 1; j < group.size(); ++j) {
            const auto w = source(group[i], group[j]);
            if (!w)
                throw IncompleteMapError("advantage graph: no weight for pair " + group[i] + "-" +
                                         group[j]);
            g.set(i, j, *w);
        }
    }
    g.validate();
    return g;
}

std::vector<std::pair<int, int>> OrderTree::edges() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < parent.size(); ++i)
        if (parent[i] >= 0) out.emplace_back(parent[i], static_cast<int>(i));
    return out;
}

namespace {

struct UnionFind {
    std::vector<int> up;
    explicit UnionFind(std::size_t n) : up(n) { std::iota(up.begin(), up.end(), 0); }
    int find(int x) {
        while (up[x] != x) x = up[x] = up[up[x]];
        return x;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        up[b] = a;
        return true;
    }
};

}  // namespace

OrderTree min_max_spanning_tree(const AdvantageGraph& graph) {
    const std::size_t n = graph.size();
    if (n < 2) throw InvalidInputError("spanning tree: need at least 2 nodes");
    graph.validate();

    struct Edge {
        double w;
        int i, j;
    };
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            edges.push_back({graph.at(i, j), static_cast<int>(i), static_cast<int>(j)});
    std::sort(edges.begin(), edges.end(), [&](const Edge& a, const Edge& b) {
        if (a.w != b.w) return a.w < b.w;
        if (graph.ids[a.i] != graph.ids[b.i]) return graph.ids[a.i] < graph.ids[b.i];
        return graph.ids[a.j] < graph.ids[b.j];
    });

    UnionFind uf(n);
    std::vector<std::vector<int>> adj(n);
    double max_edge = 0.0;
    std::size_t used = 0;
    for (const auto& e : edges) {
        if (!uf.unite(e.i, e.j)) continue;
        adj[e.i].push_back(e.j);
        adj[e.j].push_back(e.i);
        max_edge = std::max(max_edge, e.w);
        if (++used == n - 1) break;
    }
    if (used != n - 1) throw NoSpanningTreeError("spanning tree: graph is disconnected");

    // root: smallest incident tree weight sum, ties to the smaller id
    int root = 0;
    double best = 1e300;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j : adj[i]) s += graph.at(i, j);
        if (s < best || (s == best && graph.ids[i] < graph.ids[root])) {
            best = s;
            root = static_cast<int>(i);
        }
    }

    OrderTree tree;
    tree.ids = graph.ids;
    tree.parent.assign(n, -1);
    tree.root = root;
    tree.max_edge_weight = max_edge;
    std::vector<uint8_t> seen(n, 0);
    tree.order.push_back(root);
    seen[root] = 1;
    for (std::size_t head = 0; head < tree.order.size(); ++head) {
        const int u = tree.order[head];
        std::vector<int> kids = adj[u];
        std::sort(kids.begin(), kids.end(),
                  [&](int a, int b) { return graph.ids[a] < graph.ids[b]; });
        for (int v : kids) {
            if (seen[v]) continue;
            seen[v] = 1;
            tree.parent[v] = u;
            tree.order.push_back(v);
        }
    }
    return tree;
}

GroupResult run_group_key_tree(const BusContext& bus, const OrderTree& tree,
                               const std::map<std::string, std::vector<uint8_t>>& seeds,
                               const ProtocolParams& params, uint64_t seed) {
    const std::size_t n = tree.ids.size();
    if (n < 2) throw InvalidInputError("group key tree: need at least 2 members");
    GroupResult res;
    for (int idx : tree.order) res.order.push_back(tree.ids[idx]);

    auto pack_bits = [](const std::vector<uint8_t>& bits) {
        std::vector<uint8_t> bytes((bits.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) bytes[i / 8] |= static_cast<uint8_t>(1u << (7 - i % 8));
        return bytes;
    };

    std::map<std::string, std::vector<uint8_t>> held;
    for (std::size_t t = 1; t < tree.order.size(); ++t) {
        const std::string joining = tree.ids[tree.order[t]];
        const std::string parent = tree.ids[tree.parent[tree.order[t]]];
        SessionConfig cfg;
        cfg.primary_id = parent;
        cfg.secondary_id = joining;
        cfg.params = params;
        cfg.primary_stream = t == 1 ? StreamSource::from_seed(seeds.at(parent))
                                    : StreamSource::from_seed(pack_bits(held.at(parent)));
        cfg.secondary_stream = StreamSource::from_seed(seeds.at(joining));
        SessionResult sr = run_pns_two_party(bus, cfg, derive_seed(seed, t));

        // previously keyed members follow from the public bus outputs
        // every keyed member holds the parent's current key, so each can
        // regenerate the parent's stream and read the new key off the bus
        for (std::size_t h = 0; h < t; ++h) {
            const std::string& member = tree.ids[tree.order[h]];
            if (member == parent) continue;
            held[member] = derive_key_from_observation(
                sr, StreamSource::from_seed(pack_bits(held.at(member))), params);
        }
        held[parent] = sr.key_primary;
        held[joining] = sr.key_secondary;
        res.sessions.push_back(std::move(sr));
    }
    res.keys = held;
    return res;
}

MaskedOrder mask_order(const std::vector<std::string>& order,
                       const std::map<std::string, std::vector<uint8_t>>& gateway_keys,
                       std::span<const uint8_t> nonce) {
    if (nonce.empty()) throw InvalidInputError("mask_order: empty nonce");
    MaskedOrder m;
    m.nonce.assign(nonce.begin(), nonce.end());
    for (const auto& id : order) {
        auto it = gateway_keys.find(id);
        if (it == gateway_keys.end())
            throw InvalidInputError("mask_order: no gateway key for '" + id + "'");
        m.tokens.push_back(prf_tag(it->second, nonce));
    }
    return m;
}

std::optional<std::size_t> unmask_rank(const MaskedOrder& masked,
                                       std::span<const uint8_t> own_key) {
    const auto tag = prf_tag(own_key, masked.nonce);
    for (std::size_t i = 0; i < masked.tokens.size(); ++i)
        if (masked.tokens[i] == tag) return i;
    return std::nullopt;
}

void write_advantage_csv(std::ostream& out, const AdvantageGraph& graph) {
    out << "node";
    for (const auto& id : graph.ids) out << ',' << id;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < graph.size(); ++i) {
        out << graph.ids[i];
        for (std::size_t j = 0; j < graph.size(); ++j) {
            std::snprintf(buf, sizeof(buf), ",%.6f", graph.at(i, j));
            out << buf;
        }
        out << '\n';
    }
}

AdvantageGraph read_advantage_csv(std::istream& in) {
    AdvantageGraph g;
    std::string line;
    if (!std::getline(in, line)) throw InvalidInputError("advantage csv: empty file");
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // corner label
        while (std::getline(ss, cell, ',')) g.ids.push_back(cell);
    }
    const std::size_t n = g.ids.size();
    if (n == 0) throw InvalidInputError("advantage csv: no node columns");
    g.weights.assign(n * n, -1.0);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (row >= n) throw InvalidInputError("advantage csv: too many rows");
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        if (cell != g.ids[row]) throw InvalidInputError("advantage csv: row order mismatch");
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::getline(ss, cell, ','))
                throw InvalidInputError("advantage csv: short row");
            g.weights[row * n + j] = std::stod(cell);
        }
        ++row;
    }
    if (row != n) throw InvalidInputError("advantage csv: missing rows");
    return g;
}

}  // namespace pnscan

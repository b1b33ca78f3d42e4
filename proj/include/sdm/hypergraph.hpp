#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sdm/errors.hpp"
#include "sdm/rng.hpp"

namespace sdm {

/// Static hypergraph topology: n nodes, m hyperedges, each hyperedge a set of
/// distinct node ids, plus a strictly positive weight per hyperedge.
struct Hypergraph {
    int n = 0;
    std::vector<std::vector<int>> edges;  // each sorted ascending, no duplicates
    std::vector<double> edge_weights;     // diagonal of the static weight matrix

    int m() const { return static_cast<int>(edges.size()); }
};

/// Sparse 0/1 incidence in both orientations plus the degree vectors derived
/// from it. node_edges[v] lists incident edge ids; edge_nodes[e] lists member
/// node ids; both sorted ascending.
struct IncidenceSystem {
    int n = 0;
    int m = 0;
    std::vector<std::vector<int>> node_edges;
    std::vector<std::vector<int>> edge_nodes;
    std::vector<int> node_degree;  // D_V diagonal
    std::vector<int> edge_degree;  // D_E diagonal

    std::size_t nnz() const {
        std::size_t s = 0;
        for (const auto& es : node_edges) s += es.size();
        return s;
    }
};

/// Plain pairwise graph (symmetric adjacency, zero diagonal), the target of
/// clique expansion. Neighbor lists are sorted ascending.
struct PairwiseGraph {
    int n = 0;
    std::vector<std::vector<int>> adjacency;
};

inline void validate_hypergraph(const Hypergraph& hg) {
    if (hg.n < 0) throw ValidationError("hypergraph: negative node count");
    if (hg.edge_weights.size() != hg.edges.size())
        throw ValidationError("hypergraph: edge_weights length != edge count");
    for (std::size_t e = 0; e < hg.edges.size(); ++e) {
        const auto& members = hg.edges[e];
        if (members.empty())
            throw ValidationError("hypergraph: hyperedge " + std::to_string(e) + " is empty");
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (members[i] < 0 || members[i] >= hg.n)
                throw ValidationError("hypergraph: hyperedge " + std::to_string(e) +
                                      " references node " + std::to_string(members[i]) +
                                      " outside [0, " + std::to_string(hg.n) + ")");
            if (i > 0 && members[i] == members[i - 1])
                throw ValidationError("hypergraph: duplicate node " + std::to_string(members[i]) +
                                      " in hyperedge " + std::to_string(e));
        }
        const double w = hg.edge_weights[e];
        if (!(w > 0.0) || !std::isfinite(w))
            throw ValidationError("hypergraph: non-positive or non-finite weight on hyperedge " +
                                  std::to_string(e));
    }
}

/// Builds a validated hypergraph from raw edge lists; sorts each edge and
/// rejects duplicate members. Weights default to 1.
inline Hypergraph make_hypergraph(int n, std::vector<std::vector<int>> edges,
                                  std::vector<double> weights = {}) {
    Hypergraph hg;
    hg.n = n;
    for (auto& e : edges) std::sort(e.begin(), e.end());
    hg.edges = std::move(edges);
    hg.edge_weights = weights.empty() ? std::vector<double>(hg.edges.size(), 1.0) : std::move(weights);
    validate_hypergraph(hg);
    return hg;
}

/// Parses the plain-text hyperedge format: one hyperedge per line, whitespace
/// separated non-negative node ids, '#' starts a comment line. n is inferred
/// as 1 + max node id. CRLF tolerated.
inline Hypergraph load_hypergraph_stream(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<std::vector<int>> edges;
    std::string line;
    int max_id = -1;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string_view sv(line);
        const auto first = sv.find_first_not_of(" \t");
        if (first == std::string_view::npos) continue;  // blank line
        if (sv[first] == '#') continue;                 // comment
        std::istringstream ls{line};
        std::vector<int> edge;
        std::string tok;
        while (ls >> tok) {
            std::size_t pos = 0;
            long id = 0;
            try {
                id = std::stol(tok, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != tok.size() || id < 0)
                throw ParseError(origin + ":" + std::to_string(line_no) +
                                 ": malformed node id '" + tok + "'");
            edge.push_back(static_cast<int>(id));
            max_id = std::max(max_id, static_cast<int>(id));
        }
        if (edge.empty())
            throw ValidationError(origin + ":" + std::to_string(line_no) + ": empty hyperedge line");
        std::sort(edge.begin(), edge.end());
        if (std::adjacent_find(edge.begin(), edge.end()) != edge.end())
            throw ValidationError(origin + ":" + std::to_string(line_no) +
                                  ": duplicate node within hyperedge");
        edges.push_back(std::move(edge));
    }
    return make_hypergraph(max_id + 1, std::move(edges));
}

inline Hypergraph load_hypergraph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open hypergraph file: " + path);
    return load_hypergraph_stream(in, path);
}

inline void save_hypergraph(const Hypergraph& hg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write hypergraph file: " + path);
    out << "# hypergraph: " << hg.n << " nodes, " << hg.m() << " hyperedges\n";
    for (const auto& e : hg.edges) {
        for (std::size_t i = 0; i < e.size(); ++i) out << (i ? " " : "") << e[i];
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline IncidenceSystem build_incidence(const Hypergraph& hg) {
    IncidenceSystem inc;
    inc.n = hg.n;
    inc.m = hg.m();
    inc.node_edges.assign(static_cast<std::size_t>(hg.n), {});
    inc.edge_nodes = hg.edges;
    inc.node_degree.assign(static_cast<std::size_t>(hg.n), 0);
    inc.edge_degree.assign(static_cast<std::size_t>(inc.m), 0);
    for (int e = 0; e < inc.m; ++e) {
        inc.edge_degree[static_cast<std::size_t>(e)] = static_cast<int>(hg.edges[static_cast<std::size_t>(e)].size());
        for (int v : hg.edges[static_cast<std::size_t>(e)]) {
            inc.node_edges[static_cast<std::size_t>(v)].push_back(e);
            ++inc.node_degree[static_cast<std::size_t>(v)];
        }
    }
    return inc;
}

/// Pairwise projection: u~v iff some hyperedge contains both. Self-loops are
/// dropped, so singleton hyperedges contribute nothing.
inline PairwiseGraph clique_expand(const Hypergraph& hg) {
    std::vector<std::set<int>> adj(static_cast<std::size_t>(hg.n));
    for (const auto& e : hg.edges) {
        for (std::size_t i = 0; i < e.size(); ++i) {
            for (std::size_t j = i + 1; j < e.size(); ++j) {
                adj[static_cast<std::size_t>(e[i])].insert(e[j]);
                adj[static_cast<std::size_t>(e[j])].insert(e[i]);
            }
        }
    }
    PairwiseGraph g;
    g.n = hg.n;
    g.adjacency.resize(static_cast<std::size_t>(hg.n));
    for (int v = 0; v < hg.n; ++v)
        g.adjacency[static_cast<std::size_t>(v)].assign(adj[static_cast<std::size_t>(v)].begin(),
                                                        adj[static_cast<std::size_t>(v)].end());
    return g;
}

/// Random hypergraph: m hyperedges, each a uniform subset with size uniform in
/// [size_min, size_max]. A repair pass appends any uncovered node to a random
/// edge so min node degree is 1. Deterministic per seed.
inline Hypergraph generate_synthetic(int n, int m, int size_min, int size_max, std::uint64_t seed) {
    if (size_min < 2 || size_min > size_max || size_max > n)
        throw ValidationError("generate_synthetic: need 2 <= size_min <= size_max <= n");
    if (m < 1) throw ValidationError("generate_synthetic: need m >= 1");
    Rng rng(derive_seed(seed, "synthetic-hypergraph"));
    std::vector<std::vector<int>> edges;
    edges.reserve(static_cast<std::size_t>(m));
    std::vector<int> covered(static_cast<std::size_t>(n), 0);
    for (int e = 0; e < m; ++e) {
        const int size = static_cast<int>(rng.uniform_int(size_min, size_max));
        auto members = rng.sample_without_replacement(n, size);
        for (int v : members) covered[static_cast<std::size_t>(v)] = 1;
        edges.push_back(std::move(members));
    }
    for (int v = 0; v < n; ++v) {
        if (covered[static_cast<std::size_t>(v)]) continue;
        const int e = static_cast<int>(rng.uniform_int(0, m - 1));
        auto& edge = edges[static_cast<std::size_t>(e)];
        edge.insert(std::lower_bound(edge.begin(), edge.end(), v), v);
    }
    return make_hypergraph(n, std::move(edges));
}

}  // namespace sdm

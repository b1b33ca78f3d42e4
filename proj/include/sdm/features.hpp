#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sdm/diffusion.hpp"
#include "sdm/errors.hpp"
#include "sdm/hypergraph.hpp"
#include "sdm/linalg.hpp"

namespace sdm {

inline bool is_informed(NodeState s) { return s != NodeState::Uninformed; }

/// +1 for informed nodes, -1 otherwise. Recovered nodes fold to informed.
inline std::vector<double> state_feature(const std::vector<NodeState>& states) {
    std::vector<double> x(states.size());
    for (std::size_t v = 0; v < states.size(); ++v) x[v] = is_informed(states[v]) ? 1.0 : -1.0;
    return x;
}

/// Infection step normalized by the capture step (sources map to 0), -1 for
/// uninformed nodes. The normalization bounds the feature to [0,1] across
/// snapshots taken at different depths.
inline std::vector<double> time_feature(const std::vector<NodeState>& states,
                                        const std::vector<int>& infection_time, int capture_step) {
    if (states.size() != infection_time.size())
        throw ContractError("time_feature: states and infection_time lengths differ");
    const double denom = static_cast<double>(std::max(capture_step, 1));
    std::vector<double> x(states.size());
    for (std::size_t v = 0; v < states.size(); ++v) {
        if (!is_informed(states[v])) {
            x[v] = -1.0;
            continue;
        }
        const int t = infection_time[v];
        if (t == kNeverInformed)
            throw ValidationError("time_feature: informed node " + std::to_string(v) +
                                  " has no infection timestamp");
        x[v] = static_cast<double>(t) / denom;
    }
    return x;
}

/// Symmetric normalized Laplacian of the informed subgraph, with its full
/// eigendecomposition. The restriction keeps informed nodes and every
/// hyperedge that still has at least one informed member; hyperedge degrees
/// are recomputed inside the restriction.
struct InfectedLaplacian {
    std::vector<int> informed_nodes;  // ascending global node ids
    DenseMatrix laplacian;            // |G+| x |G+|
    SymmetricEigen eigen;             // ascending eigenvalues
};

inline InfectedLaplacian infected_laplacian(const IncidenceSystem& inc,
                                            const std::vector<NodeState>& states) {
    if (static_cast<int>(states.size()) != inc.n)
        throw ContractError("infected_laplacian: states length != node count");
    InfectedLaplacian out;
    std::vector<int> local(static_cast<std::size_t>(inc.n), -1);
    for (int v = 0; v < inc.n; ++v) {
        if (is_informed(states[static_cast<std::size_t>(v)])) {
            local[static_cast<std::size_t>(v)] = static_cast<int>(out.informed_nodes.size());
            out.informed_nodes.push_back(v);
        }
    }
    const int g = static_cast<int>(out.informed_nodes.size());
    if (g < 1) throw ContractError("infected_laplacian: no informed nodes");

    // restricted incidence, column-wise
    std::vector<std::vector<int>> cols;  // local node ids per retained edge
    for (int e = 0; e < inc.m; ++e) {
        std::vector<int> members;
        for (int v : inc.edge_nodes[static_cast<std::size_t>(e)])
            if (local[static_cast<std::size_t>(v)] >= 0) members.push_back(local[static_cast<std::size_t>(v)]);
        if (!members.empty()) cols.push_back(std::move(members));
    }

    std::vector<int> node_deg(static_cast<std::size_t>(g), 0);
    for (const auto& members : cols)
        for (int u : members) ++node_deg[static_cast<std::size_t>(u)];

    // L = I - Dv^{-1/2} H De^{-1} H^T Dv^{-1/2}, zero degrees pseudo-inverted to zero
    DenseMatrix L = DenseMatrix::identity(g);
    std::vector<double> dv_isqrt(static_cast<std::size_t>(g), 0.0);
    for (int u = 0; u < g; ++u)
        if (node_deg[static_cast<std::size_t>(u)] > 0)
            dv_isqrt[static_cast<std::size_t>(u)] = 1.0 / std::sqrt(static_cast<double>(node_deg[static_cast<std::size_t>(u)]));
    for (const auto& members : cols) {
        const double de_inv = 1.0 / static_cast<double>(members.size());
        for (int a : members)
            for (int b : members)
                L(a, b) -= dv_isqrt[static_cast<std::size_t>(a)] * de_inv * dv_isqrt[static_cast<std::size_t>(b)];
    }
    out.eigen = jacobi_eigen(L);
    out.laplacian = std::move(L);
    return out;
}

constexpr double kZeroEigenvalueTolerance = 1e-8;

/// Rows of the k eigenvectors with the smallest eigenvalues above the zero
/// tolerance, zero-padded when fewer exist. Each eigenvector's sign is fixed
/// so its largest-magnitude entry (lowest index on ties) is positive; the
/// magnitude comparison carries a small slack so symmetric vectors like
/// (1,0,-1)/sqrt(2) resolve the same way regardless of round-off.
/// Uninformed rows are -1 throughout.
inline DenseMatrix positional_feature(const InfectedLaplacian& lap, int k,
                                      const std::vector<NodeState>& states) {
    if (k < 1) throw ContractError("positional_feature: k must be >= 1");
    const int n = static_cast<int>(states.size());
    const int g = static_cast<int>(lap.informed_nodes.size());
    DenseMatrix pe(n, k, -1.0);
    for (int v : lap.informed_nodes)
        for (int j = 0; j < k; ++j) pe(v, j) = 0.0;

    std::vector<int> chosen;  // eigen column indices, ascending eigenvalue
    for (int j = 0; j < g && static_cast<int>(chosen.size()) < k; ++j)
        if (lap.eigen.values[static_cast<std::size_t>(j)] > kZeroEigenvalueTolerance) chosen.push_back(j);

    for (std::size_t c = 0; c < chosen.size(); ++c) {
        const int col = chosen[c];
        constexpr double kTieSlack = 1e-9;
        double best = -1.0;
        for (int i = 0; i < g; ++i) best = std::max(best, std::abs(lap.eigen.vectors(i, col)));
        int arg = 0;
        for (int i = 0; i < g; ++i)
            if (std::abs(lap.eigen.vectors(i, col)) >= best - kTieSlack) {
                arg = i;
                break;
            }
        const double sign = lap.eigen.vectors(arg, col) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < g; ++i)
            pe(lap.informed_nodes[static_cast<std::size_t>(i)], static_cast<int>(c)) =
                sign * lap.eigen.vectors(i, col);
    }
    return pe;
}

using FeatureMatrix = DenseMatrix;  // n x (2 + k): [state | time | positional]

/// Per-capture feature matrices: state, normalized infection time, and the
/// positional encoding of the informed subgraph, concatenated column-wise.
inline std::vector<FeatureMatrix> assemble_features(const IncidenceSystem& inc,
                                                    const SnapshotSeries& series, int k) {
    std::vector<FeatureMatrix> out;
    out.reserve(series.times.size());
    for (std::size_t i = 0; i < series.times.size(); ++i) {
        const auto& states = series.states[i];
        const auto x1 = state_feature(states);
        const auto x2 = time_feature(states, series.cascade.infection_time, series.times[i]);
        const auto lap = infected_laplacian(inc, states);
        const auto x3 = positional_feature(lap, k, states);
        FeatureMatrix f(inc.n, 2 + k);
        for (int v = 0; v < inc.n; ++v) {
            f(v, 0) = x1[static_cast<std::size_t>(v)];
            f(v, 1) = x2[static_cast<std::size_t>(v)];
            for (int j = 0; j < k; ++j) f(v, 2 + j) = x3(v, j);
        }
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace sdm

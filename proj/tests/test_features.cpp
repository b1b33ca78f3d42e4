#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdm/features.hpp"

using namespace sdm;

namespace {

std::vector<NodeState> all_informed(int n) {
    return std::vector<NodeState>(static_cast<std::size_t>(n), NodeState::Informed);
}

}  // namespace

TEST_CASE("state feature maps informed (and recovered) to +1, rest to -1") {
    const std::vector<NodeState> states = {NodeState::Uninformed, NodeState::Informed,
                                           NodeState::Recovered};
    const auto x = state_feature(states);
    REQUIRE(x == std::vector<double>{-1.0, 1.0, 1.0});
}

TEST_CASE("time feature normalizes by the capture step") {
    const std::vector<NodeState> states = {NodeState::Informed, NodeState::Informed,
                                           NodeState::Uninformed, NodeState::Recovered};
    const std::vector<int> t = {0, 3, kNeverInformed, 4};
    const auto x = time_feature(states, t, 4);
    REQUIRE(x[0] == 0.0);    // source
    REQUIRE(x[1] == 0.75);
    REQUIRE(x[2] == -1.0);   // never informed
    REQUIRE(x[3] == 1.0);    // informed exactly at capture

    REQUIRE_THROWS_AS(time_feature(states, {0, 3, -1}, 4), ContractError);
    const std::vector<int> missing = {0, kNeverInformed, kNeverInformed, 4};
    REQUIRE_THROWS_AS(time_feature(states, missing, 4), ValidationError);
}

TEST_CASE("single shared hyperedge yields Laplacian eigenvalues {0, 1}") {
    const Hypergraph hg = make_hypergraph(2, {{0, 1}});
    const IncidenceSystem inc = build_incidence(hg);
    const auto lap = infected_laplacian(inc, all_informed(2));
    REQUIRE(lap.informed_nodes == std::vector<int>{0, 1});
    REQUIRE(std::abs(lap.eigen.values[0] - 0.0) <= 1e-10);
    REQUIRE(std::abs(lap.eigen.values[1] - 1.0) <= 1e-10);
    // L itself is [[.5, -.5], [-.5, .5]]
    REQUIRE(std::abs(lap.laplacian(0, 0) - 0.5) <= 1e-12);
    REQUIRE(std::abs(lap.laplacian(0, 1) + 0.5) <= 1e-12);
}

TEST_CASE("three-node path has spectrum {0, 1/2, 1} and known eigenvectors") {
    const Hypergraph hg = make_hypergraph(3, {{0, 1}, {1, 2}});
    const IncidenceSystem inc = build_incidence(hg);
    const auto states = all_informed(3);
    const auto lap = infected_laplacian(inc, states);
    REQUIRE(std::abs(lap.eigen.values[0] - 0.0) <= 1e-10);
    REQUIRE(std::abs(lap.eigen.values[1] - 0.5) <= 1e-10);
    REQUIRE(std::abs(lap.eigen.values[2] - 1.0) <= 1e-10);

    // k=2 positional encoding: eigenvectors at 1/2 and 1, sign-fixed so the
    // largest-magnitude entry (lowest index on ties) is positive
    const DenseMatrix pe = positional_feature(lap, 2, states);
    const double s = 1.0 / std::sqrt(2.0);
    REQUIRE(std::abs(pe(0, 0) - s) <= 1e-10);
    REQUIRE(std::abs(pe(1, 0) - 0.0) <= 1e-10);
    REQUIRE(std::abs(pe(2, 0) + s) <= 1e-10);
    REQUIRE(std::abs(pe(0, 1) + 0.5) <= 1e-10);
    REQUIRE(std::abs(pe(1, 1) - s) <= 1e-10);
    REQUIRE(std::abs(pe(2, 1) + 0.5) <= 1e-10);
}

TEST_CASE("positional encoding pads with zeros and marks uninformed rows -1") {
    // only node 1 informed: its restricted subgraph has a lone size-1 edge,
    // so the lone eigenvalue is 0 and every requested column is padding
    const Hypergraph hg = make_hypergraph(4, {{0, 1, 2}, {2, 3}});
    const IncidenceSystem inc = build_incidence(hg);
    std::vector<NodeState> states(4, NodeState::Uninformed);
    states[1] = NodeState::Informed;
    const auto lap = infected_laplacian(inc, states);
    REQUIRE(lap.informed_nodes == std::vector<int>{1});
    REQUIRE(std::abs(lap.eigen.values[0]) <= 1e-10);

    const DenseMatrix pe = positional_feature(lap, 3, states);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(pe(1, j) == 0.0);
        REQUIRE(pe(0, j) == -1.0);
        REQUIRE(pe(2, j) == -1.0);
        REQUIRE(pe(3, j) == -1.0);
    }

    REQUIRE_THROWS_AS(positional_feature(lap, 0, states), ContractError);
    REQUIRE_THROWS_AS(infected_laplacian(inc, std::vector<NodeState>(4, NodeState::Uninformed)),
                      ContractError);
}

TEST_CASE("informed-subgraph Laplacians are symmetric PSD with orthonormal eigenvectors") {
    const Hypergraph hg = generate_synthetic(30, 14, 2, 4, 61);
    const IncidenceSystem inc = build_incidence(hg);
    const PairwiseGraph pw = clique_expand(hg);
    for (int i = 0; i < 10; ++i) {
        CascadeConfig cfg;
        cfg.seed = derive_seed(9, "feature-spectra", static_cast<std::uint64_t>(i));
        const SnapshotSeries series = run_until_coverage(hg, inc, pw, cfg);
        for (const auto& states : series.states) {
            const auto lap = infected_laplacian(inc, states);
            const int g = static_cast<int>(lap.informed_nodes.size());
            const DenseMatrix& L = lap.laplacian;
            for (int a = 0; a < g; ++a)
                for (int b = 0; b < g; ++b) REQUIRE(std::abs(L(a, b) - L(b, a)) <= 1e-12);
            for (int j = 0; j < g; ++j) {
                REQUIRE(lap.eigen.values[static_cast<std::size_t>(j)] >= -1e-10);
                REQUIRE(lap.eigen.values[static_cast<std::size_t>(j)] <= 2.0 + 1e-10);
                if (j > 0)
                    REQUIRE(lap.eigen.values[static_cast<std::size_t>(j)] >=
                            lap.eigen.values[static_cast<std::size_t>(j - 1)]);
            }
            // V^T V = I and V diag(w) V^T = L
            const DenseMatrix& V = lap.eigen.vectors;
            DenseMatrix vtv = matmul(transpose(V), V);
            for (int a = 0; a < g; ++a)
                for (int b = 0; b < g; ++b)
                    REQUIRE(std::abs(vtv(a, b) - (a == b ? 1.0 : 0.0)) <= 1e-10);
            DenseMatrix vl(g, g);
            for (int a = 0; a < g; ++a)
                for (int b = 0; b < g; ++b)
                    vl(a, b) = V(a, b) * lap.eigen.values[static_cast<std::size_t>(b)];
            REQUIRE(max_abs_diff(matmul(vl, transpose(V)), L) <= 1e-10);
        }
    }
}

TEST_CASE("chosen eigenvector signs follow the largest-entry convention") {
    const Hypergraph hg = generate_synthetic(25, 10, 2, 5, 71);
    const IncidenceSystem inc = build_incidence(hg);
    const PairwiseGraph pw = clique_expand(hg);
    CascadeConfig cfg;
    cfg.seed = 15;
    const SnapshotSeries series = run_until_coverage(hg, inc, pw, cfg);
    const int k = 4;
    for (const auto& states : series.states) {
        const auto lap = infected_laplacian(inc, states);
        const DenseMatrix pe = positional_feature(lap, k, states);
        for (int j = 0; j < k; ++j) {
            double best = 0.0;
            double at_best = 0.0;
            for (int v : lap.informed_nodes) {
                if (std::abs(pe(v, j)) > best) {
                    best = std::abs(pe(v, j));
                    at_best = pe(v, j);
                }
            }
            if (best > 0.0) REQUIRE(at_best > 0.0);
        }
        // deterministic: rebuilding gives the identical matrix
        const DenseMatrix again = positional_feature(infected_laplacian(inc, states), k, states);
        REQUIRE(max_abs_diff(pe, again) == 0.0);
    }
}

TEST_CASE("assembled features stack state, time, and positional columns") {
    const Hypergraph hg = generate_synthetic(20, 8, 2, 4, 81);
    const IncidenceSystem inc = build_incidence(hg);
    CascadeConfig cfg;
    cfg.seed = 23;
    const SnapshotSeries series = run_until_coverage(hg, cfg);
    const int k = 3;
    const auto feats = assemble_features(inc, series, k);
    REQUIRE(feats.size() == series.times.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const FeatureMatrix& f = feats[i];
        REQUIRE(f.rows == hg.n);
        REQUIRE(f.cols == 2 + k);
        const auto x1 = state_feature(series.states[i]);
        const auto x2 = time_feature(series.states[i], series.cascade.infection_time, series.times[i]);
        const auto pe = positional_feature(infected_laplacian(inc, series.states[i]), k, series.states[i]);
        for (int v = 0; v < hg.n; ++v) {
            REQUIRE(f(v, 0) == x1[static_cast<std::size_t>(v)]);
            REQUIRE(f(v, 1) == x2[static_cast<std::size_t>(v)]);
            for (int j = 0; j < k; ++j) REQUIRE(f(v, 2 + j) == pe(v, j));
            if (series.states[i][static_cast<std::size_t>(v)] == NodeState::Uninformed) {
                REQUIRE(f(v, 0) == -1.0);
                REQUIRE(f(v, 1) == -1.0);
                REQUIRE(f(v, 2) == -1.0);
            } else {
                REQUIRE(f(v, 1) >= 0.0);
                REQUIRE(f(v, 1) <= 1.0);
            }
        }
    }
}

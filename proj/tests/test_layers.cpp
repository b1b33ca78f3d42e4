#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdm/layers.hpp"

using namespace sdm;

namespace {

// Dense reference: D_V^{-1/2} H W D_E^{-1} H^T D_V^{-1/2} with pseudo-inverted
// zero degrees.
DenseMatrix dense_propagation(const IncidenceSystem& inc, const std::vector<double>& w) {
    DenseMatrix h(inc.n, inc.m);
    for (int e = 0; e < inc.m; ++e)
        for (int v : inc.edge_nodes[static_cast<std::size_t>(e)]) h(v, e) = 1.0;
    DenseMatrix dv_isqrt(inc.n, inc.n);
    for (int v = 0; v < inc.n; ++v)
        if (inc.node_degree[static_cast<std::size_t>(v)] > 0)
            dv_isqrt(v, v) = 1.0 / std::sqrt(static_cast<double>(inc.node_degree[static_cast<std::size_t>(v)]));
    DenseMatrix wde(inc.m, inc.m);
    for (int e = 0; e < inc.m; ++e)
        wde(e, e) = w[static_cast<std::size_t>(e)] / static_cast<double>(inc.edge_degree[static_cast<std::size_t>(e)]);
    return matmul(matmul(matmul(matmul(dv_isqrt, h), wde), transpose(h)), dv_isqrt);
}

std::vector<double> apply_op(const SparseHandle& s, const std::vector<double>& x) {
    std::vector<double> y(static_cast<std::size_t>(s.fwd->rows), 0.0);
    s.fwd->multiply_into(x.data(), 1, y.data());
    return y;
}

}  // namespace

TEST_CASE("propagation operator matches its dense definition") {
    const Hypergraph hg = make_hypergraph(5, {{0, 1, 2}, {1, 3}, {2, 3, 4}});
    const IncidenceSystem inc = build_incidence(hg);
    const std::vector<double> w = {1.0, 2.5, 0.5};
    const GraphOperators ops = build_graph_operators(inc, w);

    const DenseMatrix got = ops.propagation.fwd->to_dense();
    const DenseMatrix want = dense_propagation(inc, w);
    REQUIRE(max_abs_diff(got, want) <= 1e-12);
    // symmetric for any diagonal edge-weighting
    REQUIRE(max_abs_diff(got, transpose(got)) <= 1e-12);

    REQUIRE_THROWS_AS(build_graph_operators(inc, {1.0}), ContractError);
}

TEST_CASE("isolated nodes keep all-zero operator rows and columns") {
    const Hypergraph hg = make_hypergraph(4, {{0, 1}, {1, 2}});
    const IncidenceSystem inc = build_incidence(hg);
    const GraphOperators ops = build_graph_operators(inc, {1.0, 1.0});

    const DenseMatrix p = ops.propagation.fwd->to_dense();
    for (int i = 0; i < 4; ++i) {
        REQUIRE(p(3, i) == 0.0);
        REQUIRE(p(i, 3) == 0.0);
    }
    const DenseMatrix n2e = ops.node_to_edge.fwd->to_dense();
    for (int e = 0; e < 2; ++e) REQUIRE(n2e(e, 3) == 0.0);
    const DenseMatrix e2n = ops.edge_to_node.fwd->to_dense();
    for (int e = 0; e < 2; ++e) REQUIRE(e2n(3, e) == 0.0);
}

TEST_CASE("averaging operators have unit column sums and conserve mass") {
    const Hypergraph hg = generate_synthetic(20, 9, 2, 5, 5);
    const IncidenceSystem inc = build_incidence(hg);
    const GraphOperators ops = build_graph_operators(inc, std::vector<double>(hg.m(), 1.0));

    // column v of H^T D_V^{-1} holds deg(v) copies of 1/deg(v)
    const DenseMatrix n2e = ops.node_to_edge.fwd->to_dense();
    for (int v = 0; v < inc.n; ++v) {
        double col = 0.0;
        for (int e = 0; e < inc.m; ++e) col += n2e(e, v);
        REQUIRE(std::abs(col - 1.0) <= 1e-12);
    }
    // column e of H D_E^{-1} holds |e| copies of 1/|e|
    const DenseMatrix e2n = ops.edge_to_node.fwd->to_dense();
    for (int e = 0; e < inc.m; ++e) {
        double col = 0.0;
        for (int v = 0; v < inc.n; ++v) col += e2n(v, e);
        REQUIRE(std::abs(col - 1.0) <= 1e-12);
    }

    // node -> edge -> node round trip preserves the total signal
    Rng rng(2);
    std::vector<double> hvec(static_cast<std::size_t>(inc.n));
    for (double& v : hvec) v = rng.uniform(-2.0, 2.0);
    const std::vector<double> back = apply_op(ops.edge_to_node, apply_op(ops.node_to_edge, hvec));
    double before = 0.0, after = 0.0;
    for (double v : hvec) before += v;
    for (double v : back) after += v;
    REQUIRE(std::abs(before - after) <= 1e-12);
}

TEST_CASE("identity-weight linear convolution reproduces P X exactly") {
    const Hypergraph hg = generate_synthetic(12, 6, 2, 4, 13);
    const IncidenceSystem inc = build_incidence(hg);
    const GraphOperators ops = build_graph_operators(inc, std::vector<double>(hg.m(), 1.0));

    Rng rng(4);
    HGNNLayer layer(3, 3, ops.propagation, rng);
    layer.weight.value = Tensor::from_dense(DenseMatrix::identity(3));
    layer.relu_activation = false;

    Tensor x({12, 3});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);

    const Tensor got = layer.forward_plain(x);
    const DenseMatrix p = ops.propagation.fwd->to_dense();
    DenseMatrix xd(12, 3);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 3; ++j) xd(i, j) = x.at(i, j);
    const DenseMatrix want = matmul(p, xd);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 3; ++j) REQUIRE(std::abs(got.at(i, j) - want(i, j)) <= 1e-12);
}

TEST_CASE("tape and plain convolution forwards agree, relu included") {
    const Hypergraph hg = generate_synthetic(15, 7, 2, 4, 23);
    const IncidenceSystem inc = build_incidence(hg);
    const GraphOperators ops = build_graph_operators(inc, std::vector<double>(hg.m(), 1.0));

    Rng rng(6);
    HGNNLayer layer(4, 5, ops.propagation, rng);
    Tensor x({15, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);

    Tape tape;
    const Tensor via_tape = tape.value(layer.forward(tape, tape.constant(x)));
    const Tensor plain = layer.forward_plain(x);
    REQUIRE(via_tape.shape == plain.shape);
    for (std::size_t i = 0; i < plain.data.size(); ++i) {
        REQUIRE(std::abs(via_tape.data[i] - plain.data[i]) <= 1e-13);
        REQUIRE(plain.data[i] >= 0.0);  // relu output
    }
}

TEST_CASE("convolution weight gradients pass the numeric check") {
    const Hypergraph hg = generate_synthetic(8, 4, 2, 3, 33);
    const IncidenceSystem inc = build_incidence(hg);
    const GraphOperators ops = build_graph_operators(inc, std::vector<double>(hg.m(), 1.0));

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(derive_seed(401, "hgnn-grad", seed));
        HGNNLayer layer(3, 2, ops.propagation, rng);
        Tensor x({8, 3});
        for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
        const auto build = [&](Tape& t) {
            const Value y = layer.forward(t, t.constant(x));
            return t.sum_all(t.mul(y, y));
        };
        const auto rep = gradcheck(build, {&layer.weight});
        INFO("seed " << seed << " worst " << rep.worst);
        REQUIRE(rep.max_rel_err <= 1e-4);
    }
}

TEST_CASE("edge-scoring head outputs lie strictly inside (0,1) and train") {
    Rng rng(7);
    MLPHead head(6, 8, rng);
    REQUIRE(head.parameters().size() == 4);

    Tensor x({5, 6});
    for (double& v : x.data) v = rng.uniform(-2.0, 2.0);
    Tape tape;
    const Tensor y = tape.value(head.forward(tape, tape.constant(x)));
    REQUIRE(y.shape == std::vector<int>{5, 1});
    for (double v : y.data) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng r2(derive_seed(402, "head-grad", seed));
        MLPHead h2(4, 6, r2);
        Tensor x2({3, 4});
        for (double& v : x2.data) v = r2.uniform(-1.0, 1.0);
        const auto build = [&](Tape& t) { return t.sum_all(h2.forward(t, t.constant(x2))); };
        const auto rep = gradcheck(build, h2.parameters());
        INFO("seed " << seed << " worst " << rep.worst);
        REQUIRE(rep.max_rel_err <= 1e-4);
    }
}

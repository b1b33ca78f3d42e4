#pragma once

// Hypergraph-aware neural layers: degree-normalized convolution over the
// incidence structure and a small MLP head that scores hyperedges.

#include <cmath>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "sdm/autodiff.hpp"
#include "sdm/errors.hpp"
#include "sdm/hypergraph.hpp"
#include "sdm/rng.hpp"
#include "sdm/tensor.hpp"

namespace sdm {

// The three sparse operators every forward pass needs, built once per
// hypergraph and shared across snapshots and samples.
//
//   propagation  (n x n):  D_V^{-1/2} H W D_E^{-1} H^T D_V^{-1/2}
//   node_to_edge (m x n):  H^T D_V^{-1}   (mean of member-node signals)
//   edge_to_node (n x m):  H D_E^{-1}     (spread edge signal back, averaged)
//
// Zero-degree rows follow the pseudo-inverse convention: they stay all-zero.
struct GraphOperators {
    int n = 0;
    int m = 0;
    SparseHandle propagation;
    SparseHandle node_to_edge;
    SparseHandle edge_to_node;
};

inline GraphOperators build_graph_operators(const IncidenceSystem& inc,
                                            const std::vector<double>& edge_weights) {
    if (static_cast<int>(edge_weights.size()) != inc.m)
        throw ContractError("graph operators: edge weight count does not match edge count");

    std::vector<std::tuple<int, int, double>> prop;
    std::vector<std::tuple<int, int, double>> n2e;
    std::vector<std::tuple<int, int, double>> e2n;

    for (int e = 0; e < inc.m; ++e) {
        const auto& members = inc.edge_nodes[static_cast<std::size_t>(e)];
        const double de = inc.edge_degree[static_cast<std::size_t>(e)];
        if (members.empty()) continue;
        const double inv_de = 1.0 / de;
        for (int v : members) {
            const double dv = inc.node_degree[static_cast<std::size_t>(v)];
            n2e.emplace_back(e, v, 1.0 / dv);  // dv >= 1 whenever v is a member
            e2n.emplace_back(v, e, inv_de);
        }
        const double w = edge_weights[static_cast<std::size_t>(e)];
        for (int u : members) {
            const double du = inc.node_degree[static_cast<std::size_t>(u)];
            for (int v : members) {
                const double dv = inc.node_degree[static_cast<std::size_t>(v)];
                prop.emplace_back(u, v, w * inv_de / (std::sqrt(du) * std::sqrt(dv)));
            }
        }
    }

    GraphOperators ops;
    ops.n = inc.n;
    ops.m = inc.m;
    ops.propagation = make_sparse_handle(SparseMatrix::from_triplets(inc.n, inc.n, prop));
    ops.node_to_edge = make_sparse_handle(SparseMatrix::from_triplets(inc.m, inc.n, n2e));
    ops.edge_to_node = make_sparse_handle(SparseMatrix::from_triplets(inc.n, inc.m, e2n));
    return ops;
}

// One spectral convolution over the hypergraph: sigma(P X W).  P is the cached
// propagation operator above, W is the only trainable piece.
struct HGNNLayer {
    Parameter weight;
    SparseHandle propagation;
    bool relu_activation = true;

    HGNNLayer() = default;

    HGNNLayer(int f_in, int f_out, SparseHandle prop, Rng& rng, std::string name = "hgnn.weight")
        : weight(make_uniform_parameter(std::move(name), {f_in, f_out},
                                        1.0 / std::sqrt(static_cast<double>(f_in)), rng)),
          propagation(std::move(prop)) {}

    Value forward(Tape& tape, Value x) const {
        Value px = tape.spmm(propagation, x);
        Value out = tape.matmul(px, tape.param(const_cast<Parameter&>(weight)));
        return relu_activation ? tape.relu(out) : out;
    }

    // Plain (non-tape) forward used by oracles and by inference-only paths.
    Tensor forward_plain(const Tensor& x) const {
        Tensor px(std::vector<int>{propagation.fwd->rows, x.shape[1]});
        propagation.fwd->multiply_into(x.data.data(), x.shape[1], px.data.data());
        const int f_in = weight.value.shape[0];
        const int f_out = weight.value.shape[1];
        if (x.shape[1] != f_in) throw ContractError("hgnn: feature width mismatch");
        Tensor out(std::vector<int>{px.shape[0], f_out});
        for (int i = 0; i < px.shape[0]; ++i)
            for (int k = 0; k < f_in; ++k) {
                const double a = px.at(i, k);
                if (a == 0.0) continue;
                for (int j = 0; j < f_out; ++j)
                    out.at(i, j) += a * weight.value.at(k, j);
            }
        if (relu_activation)
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return out;
    }
};

// Two-layer perceptron with sigmoid output, used to turn hyperedge summaries
// into per-edge weights in (0, 1).
struct MLPHead {
    Parameter w1, b1, w2, b2;

    MLPHead() = default;

    MLPHead(int d_in, int hidden, Rng& rng, const std::string& prefix = "edge_head")
        : w1(make_uniform_parameter(prefix + ".w1", {d_in, hidden},
                                    1.0 / std::sqrt(static_cast<double>(d_in)), rng)),
          b1(make_uniform_parameter(prefix + ".b1", {1, hidden},
                                    1.0 / std::sqrt(static_cast<double>(d_in)), rng)),
          w2(make_uniform_parameter(prefix + ".w2", {hidden, 1},
                                    1.0 / std::sqrt(static_cast<double>(hidden)), rng)),
          b2(make_uniform_parameter(prefix + ".b2", {1, 1},
                                    1.0 / std::sqrt(static_cast<double>(hidden)), rng)) {}

    // x: (rows, d_in) -> (rows, 1), entries strictly inside (0, 1).
    Value forward(Tape& tape, Value x) const {
        Tape& t = tape;
        Value h = t.relu(t.add_rowvec(t.matmul(x, t.param(const_cast<Parameter&>(w1))),
                                      t.param(const_cast<Parameter&>(b1))));
        Value o = t.add_rowvec(t.matmul(h, t.param(const_cast<Parameter&>(w2))),
                               t.param(const_cast<Parameter&>(b2)));
        return t.sigmoid(o);
    }

    std::vector<Parameter*> parameters() {
        return {&w1, &b1, &w2, &b2};
    }
};

}  // namespace sdm

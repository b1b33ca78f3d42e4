#pragma once

// Selective state-space block with hypergraph coupling.
//
// Per node v and channel ch the block keeps a d_state-wide hidden vector and
// runs the discrete recurrence
//
//   h_t = Abar_t * h_{t-1} + Bbar_t * x_t + aggregate(h_{t-1})
//   y_t = C_t . h_t + d_skip * x_t
//
// where Abar/Bbar come from zero-order-hold discretization of a diagonal
// continuous system and aggregate() routes hidden state through hyperedges
// (node -> edge mean, learned edge weight, edge -> node mean).  B_t, C_t and
// the step size Delta_t are input-dependent ("selective") unless disabled,
// in which case the block is linear time-invariant and admits an equivalent
// convolution kernel (see lti_kernel_apply).

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "sdm/autodiff.hpp"
#include "sdm/errors.hpp"
#include "sdm/layers.hpp"
#include "sdm/rng.hpp"
#include "sdm/tensor.hpp"

namespace sdm {

namespace detail {

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// phi(x) = (exp(x) - 1) / x with the same series fallback the tape op uses,
// so plain and tape evaluations agree bit for bit.
inline double expm1_over_x(double x) {
    return std::abs(x) < Tape::kZohSeriesThreshold ? 1.0 + 0.5 * x + x * x / 6.0
                                                   : std::expm1(x) / x;
}

}  // namespace detail

struct ZohCoefficients {
    double a_bar = 0.0;
    double b_bar = 0.0;
};

// Exact zero-order hold for a scalar channel: a_bar = exp(delta a),
// b_bar = (delta a)^{-1} (exp(delta a) - 1) delta b, with the series branch
// taking over when |delta a| < 1e-8 (limit: b_bar -> delta b).
inline ZohCoefficients zoh_discretize(double a, double b, double delta) {
    if (!(delta > 0.0)) throw ContractError("zoh_discretize: step size must be positive");
    const double x = delta * a;
    return {std::exp(x), detail::expm1_over_x(x) * delta * b};
}

// Convolution kernel of a time-invariant diagonal SSM channel:
// K[j] = sum_s c[s] * a_bar[s]^j * b_bar[s], j = 0..length-1.
inline std::vector<double> lti_kernel(const std::vector<double>& a_bar,
                                      const std::vector<double>& b_bar,
                                      const std::vector<double>& c, int length) {
    if (a_bar.size() != b_bar.size() || a_bar.size() != c.size())
        throw ContractError("lti_kernel: coefficient lengths differ");
    if (length < 0) throw ContractError("lti_kernel: negative length");
    std::vector<double> kernel(static_cast<std::size_t>(length), 0.0);
    std::vector<double> pow_a(a_bar.size(), 1.0);
    for (int j = 0; j < length; ++j) {
        double acc = 0.0;
        for (std::size_t s = 0; s < a_bar.size(); ++s) {
            acc += c[s] * pow_a[s] * b_bar[s];
            pow_a[s] *= a_bar[s];
        }
        kernel[static_cast<std::size_t>(j)] = acc;
    }
    return kernel;
}

struct SSMBlockConfig {
    int channels = 32;
    int d_state = 16;
    int edge_head_hidden = 64;
    bool selective = true;            // input-dependent B, C, Delta
    bool graph_coupling = true;       // add the hyperedge aggregation term
    bool learned_edge_weights = true; // edge weights from the MLP head vs. 1
};

struct SSMBlock {
    SSMBlockConfig cfg;
    Parameter a_log;    // (c, d): A = -exp(a_log), elementwise negative
    Parameter w_b;      // (c, d): B_t = x_t W_B
    Parameter w_c;      // (c, d): C_t = x_t W_C
    Parameter w_delta;  // (c, c)
    Parameter b_delta;  // (1, c): Delta_t = softplus(x_t W_Delta + b_delta)
    Parameter d_skip;   // (1, c)
    Parameter b_fixed;  // (1, d): used when selective == false
    Parameter c_fixed;  // (1, d)
    MLPHead edge_head;  // (c*d) -> hidden -> 1, sigmoid

    SSMBlock() = default;

    SSMBlock(SSMBlockConfig config, Rng& rng, const std::string& prefix = "ssm")
        : cfg(config) {
        const int c = cfg.channels, d = cfg.d_state;
        if (c <= 0 || d <= 0) throw ContractError("ssm block: dimensions must be positive");
        a_log = Parameter(prefix + ".a_log", Tensor({c, d}));
        for (int ch = 0; ch < c; ++ch)
            for (int s = 0; s < d; ++s) a_log.value.at(ch, s) = std::log(static_cast<double>(s + 1));
        const double rb = 1.0 / std::sqrt(static_cast<double>(c));
        w_b = make_uniform_parameter(prefix + ".w_b", {c, d}, rb, rng);
        w_c = make_uniform_parameter(prefix + ".w_c", {c, d}, rb, rng);
        w_delta = make_uniform_parameter(prefix + ".w_delta", {c, c}, rb, rng);
        b_delta = Parameter(prefix + ".b_delta", Tensor({1, c}));
        for (int ch = 0; ch < c; ++ch) {
            // softplus(b_delta) lands in [1e-3, 1e-1]
            const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            b_delta.value.at(0, ch) = std::log(std::expm1(dt));
        }
        d_skip = Parameter(prefix + ".d_skip", Tensor({1, c}));
        for (int ch = 0; ch < c; ++ch) d_skip.value.at(0, ch) = 1.0;
        const double rd = 1.0 / std::sqrt(static_cast<double>(d));
        b_fixed = make_uniform_parameter(prefix + ".b_fixed", {1, d}, rd, rng);
        c_fixed = make_uniform_parameter(prefix + ".c_fixed", {1, d}, rd, rng);
        edge_head = MLPHead(c * d, cfg.edge_head_hidden, rng, prefix + ".edge_head");
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps = {&a_log, &w_b, &w_c, &w_delta, &b_delta, &d_skip};
        if (!cfg.selective) {
            ps.push_back(&b_fixed);
            ps.push_back(&c_fixed);
        }
        if (cfg.graph_coupling && cfg.learned_edge_weights)
            for (Parameter* p : edge_head.parameters()) ps.push_back(p);
        return ps;
    }
};

// Input-dependent projections for one step.  x: (n, c).
struct SelectiveParams {
    Value b;      // (n, d)
    Value c;      // (n, d)
    Value delta;  // (n, c), strictly positive
};

namespace detail {

struct BoundSSM {
    Value a;  // (c, d) = -exp(a_log)
    Value w_b, w_c, w_delta, b_delta, d_skip, b_fixed, c_fixed;
};

inline BoundSSM bind_block(Tape& tape, const SSMBlock& block) {
    auto& b = const_cast<SSMBlock&>(block);
    BoundSSM bb;
    bb.a = tape.scale(tape.exp(tape.param(b.a_log)), -1.0);
    bb.w_b = tape.param(b.w_b);
    bb.w_c = tape.param(b.w_c);
    bb.w_delta = tape.param(b.w_delta);
    bb.b_delta = tape.param(b.b_delta);
    bb.d_skip = tape.param(b.d_skip);
    bb.b_fixed = tape.param(b.b_fixed);
    bb.c_fixed = tape.param(b.c_fixed);
    return bb;
}

inline SelectiveParams step_params(Tape& tape, const SSMBlock& block, const BoundSSM& bb,
                                   Value x, Value zeros_nd, Value zeros_nc) {
    SelectiveParams sp;
    if (block.cfg.selective) {
        sp.b = tape.matmul(x, bb.w_b);
        sp.c = tape.matmul(x, bb.w_c);
        sp.delta = tape.softplus(tape.add_rowvec(tape.matmul(x, bb.w_delta), bb.b_delta));
    } else {
        sp.b = tape.add_rowvec(zeros_nd, bb.b_fixed);
        sp.c = tape.add_rowvec(zeros_nd, bb.c_fixed);
        sp.delta = tape.softplus(tape.add_rowvec(zeros_nc, bb.b_delta));
    }
    return sp;
}

}  // namespace detail

inline SelectiveParams selective_params(Tape& tape, const SSMBlock& block, Value x) {
    const Tensor& tx = tape.value(x);
    if (tx.rank() != 2 || tx.shape[1] != block.cfg.channels)
        throw ContractError("selective_params: input must be (n, channels)");
    const int n = tx.shape[0];
    Value zeros_nd = tape.constant(Tensor({n, block.cfg.d_state}));
    Value zeros_nc = tape.constant(Tensor({n, block.cfg.channels}));
    auto bb = detail::bind_block(tape, block);
    return detail::step_params(tape, block, bb, x, zeros_nd, zeros_nc);
}

struct NeighborResult {
    Value aggregated;    // same shape as the input state
    Value edge_weights;  // (m, 1) when a head is supplied; otherwise unset
    bool learned = false;
};

// aggregate(h) = H D_E^{-1} W H^T D_V^{-1} h for h of shape (n, k).
// W = diag(head(H^T D_V^{-1} h)) when head != nullptr, identity otherwise.
// Rank > 2 states are treated as (n, k) with the trailing axes flattened;
// the result keeps the input shape.
inline NeighborResult neighbor_aggregate(Tape& tape, Value h, const GraphOperators& ops,
                                         const MLPHead* head) {
    // note: pushing nodes may reallocate the tape, so take what we need from
    // the input tensor up front instead of holding a reference across pushes
    const int in_rank = tape.value(h).rank();
    if (in_rank < 2 || tape.value(h).shape[0] != ops.n)
        throw ContractError("neighbor_aggregate: state must be (n, k)");
    NeighborResult res;
    Value h_edge = tape.spmm(ops.node_to_edge, h);  // (m, k)
    Value weighted = h_edge;
    if (head != nullptr) {
        Value flat = h_edge;
        if (in_rank > 2) {
            const Tensor& te = tape.value(h_edge);
            flat = tape.reshape(h_edge, {te.shape[0], static_cast<int>(te.numel()) / te.shape[0]});
        }
        res.edge_weights = head->forward(tape, flat);  // (m, 1)
        res.learned = true;
        weighted = tape.col_scale(h_edge, res.edge_weights);
    }
    res.aggregated = tape.spmm(ops.edge_to_node, weighted);  // (n, k)
    return res;
}

struct ScanResult {
    std::vector<Value> outputs;       // y_t, each (n, c), in scan order
    std::vector<Value> states;        // h_t, each (n, c, d), in scan order
    std::vector<Value> edge_weights;  // per-step (m, 1) when learned
};

// Runs the block over `inputs` (already in the desired temporal order; the
// caller reverses snapshot sequences).  The hidden state starts at zero.
inline ScanResult graph_scan(Tape& tape, const SSMBlock& block, const std::vector<Value>& inputs,
                             const GraphOperators& ops) {
    if (inputs.empty()) throw ContractError("graph_scan: empty input sequence");
    const int n = ops.n, c = block.cfg.channels, d = block.cfg.d_state;
    for (Value v : inputs) {
        const Tensor& tv = tape.value(v);
        if (tv.rank() != 2 || tv.shape[0] != n || tv.shape[1] != c)
            throw ContractError("graph_scan: inputs must be (n, channels)");
    }

    auto bb = detail::bind_block(tape, block);
    Value zeros_nd = tape.constant(Tensor({n, d}));
    Value zeros_nc = tape.constant(Tensor({n, c}));
    const MLPHead* head = block.cfg.learned_edge_weights ? &block.edge_head : nullptr;

    ScanResult res;
    res.outputs.reserve(inputs.size());
    res.states.reserve(inputs.size());

    bool have_state = false;
    Value h = tape.constant(Tensor({n, c, d}));  // h_0 = 0
    for (Value x : inputs) {
        SelectiveParams sp = detail::step_params(tape, block, bb, x, zeros_nd, zeros_nc);
        Value h_next = tape.zoh_update(h, bb.a, sp.delta, sp.b, x);
        if (have_state && block.cfg.graph_coupling) {
            NeighborResult agg = neighbor_aggregate(tape, h, ops, head);
            if (agg.learned) res.edge_weights.push_back(agg.edge_weights);
            h_next = tape.add(h_next, agg.aggregated);
        }
        h = h_next;
        have_state = true;

        Value y = tape.add(tape.state_readout(sp.c, h), tape.row_scale(x, bb.d_skip));
        res.states.push_back(h);
        res.outputs.push_back(y);
    }
    return res;
}

// Equivalent convolution form of a *time-invariant* block (selective and
// graph coupling disabled): y_t = sum_{j<=t} K[j] x_{t-j} + d_skip * x_t.
inline std::vector<Tensor> lti_kernel_apply(const SSMBlock& block,
                                            const std::vector<Tensor>& inputs) {
    if (block.cfg.selective)
        throw ContractError("lti_kernel_apply: selective parameters enabled");
    if (block.cfg.graph_coupling)
        throw ContractError("lti_kernel_apply: graph coupling enabled");
    if (inputs.empty()) throw ContractError("lti_kernel_apply: empty input sequence");
    const int c = block.cfg.channels, d = block.cfg.d_state;
    const int steps = static_cast<int>(inputs.size());
    const int n = inputs.front().shape[0];
    for (const Tensor& t : inputs)
        if (t.rank() != 2 || t.shape[0] != n || t.shape[1] != c)
            throw ContractError("lti_kernel_apply: inputs must be (n, channels)");

    // Per-channel kernels from the block's own parameters.
    std::vector<std::vector<double>> kernels(static_cast<std::size_t>(c));
    std::vector<double> cvec(static_cast<std::size_t>(d));
    for (int s = 0; s < d; ++s) cvec[static_cast<std::size_t>(s)] = block.c_fixed.value.at(0, s);
    for (int ch = 0; ch < c; ++ch) {
        const double delta = detail::softplus(block.b_delta.value.at(0, ch));
        std::vector<double> abar(static_cast<std::size_t>(d)), bbar(static_cast<std::size_t>(d));
        for (int s = 0; s < d; ++s) {
            const double a = -std::exp(block.a_log.value.at(ch, s));
            const ZohCoefficients z = zoh_discretize(a, block.b_fixed.value.at(0, s), delta);
            abar[static_cast<std::size_t>(s)] = z.a_bar;
            bbar[static_cast<std::size_t>(s)] = z.b_bar;
        }
        kernels[static_cast<std::size_t>(ch)] = lti_kernel(abar, bbar, cvec, steps);
    }

    std::vector<Tensor> outputs;
    outputs.reserve(inputs.size());
    for (int t = 0; t < steps; ++t) {
        Tensor y({n, c});
        for (int v = 0; v < n; ++v)
            for (int ch = 0; ch < c; ++ch) {
                double acc = block.d_skip.value.at(0, ch) * inputs[static_cast<std::size_t>(t)].at(v, ch);
                const auto& k = kernels[static_cast<std::size_t>(ch)];
                for (int j = 0; j <= t; ++j)
                    acc += k[static_cast<std::size_t>(j)] * inputs[static_cast<std::size_t>(t - j)].at(v, ch);
                y.at(v, ch) = acc;
            }
        outputs.push_back(std::move(y));
    }
    return outputs;
}

}  // namespace sdm

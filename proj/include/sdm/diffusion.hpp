#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sdm/errors.hpp"
#include "sdm/hypergraph.hpp"
#include "sdm/rng.hpp"

namespace sdm {

enum class DiffusionModel { IC, SI, SIS, SIR };

inline std::string to_string(DiffusionModel m) {
    switch (m) {
        case DiffusionModel::IC: return "IC";
        case DiffusionModel::SI: return "SI";
        case DiffusionModel::SIS: return "SIS";
        case DiffusionModel::SIR: return "SIR";
    }
    throw ContractError("unknown diffusion model");
}

inline DiffusionModel diffusion_model_from_string(const std::string& s) {
    if (s == "IC") return DiffusionModel::IC;
    if (s == "SI") return DiffusionModel::SI;
    if (s == "SIS") return DiffusionModel::SIS;
    if (s == "SIR") return DiffusionModel::SIR;
    throw ParseError("unknown diffusion model: " + s);
}

// Per-node propagation state. Recovered exists only under SIR; for coverage
// and features it still counts as informed (the node did spread the rumor).
enum class NodeState : int { Uninformed = 0, Informed = 1, Recovered = 2 };

constexpr int kNeverInformed = -1;

struct CascadeConfig {
    DiffusionModel model = DiffusionModel::IC;
    double source_fraction = 0.05;
    double p_low_min = 0.0;   // per-node pairwise rate drawn uniformly from
    double p_low_max = 0.5;   // [p_low_min, p_low_max)
    double high_order_coefficient = 0.3;
    double recovery_probability = 0.0;  // SIS/SIR only
    std::uint64_t seed = 0;
    std::vector<double> coverage_targets = {0.1, 0.2, 0.3};
    int max_steps = 200;
    int max_retries = 50;  // reseeded attempts before a stalled cascade errors
};

inline void validate_cascade_config(const CascadeConfig& cfg) {
    if (!(cfg.source_fraction > 0.0 && cfg.source_fraction < 1.0))
        throw ValidationError("cascade config: source_fraction must be in (0,1)");
    if (cfg.coverage_targets.empty())
        throw ValidationError("cascade config: coverage_targets empty");
    for (std::size_t i = 0; i < cfg.coverage_targets.size(); ++i) {
        const double t = cfg.coverage_targets[i];
        if (!(t > 0.0 && t <= 1.0))
            throw ValidationError("cascade config: coverage target out of (0,1]");
        if (i > 0 && !(t > cfg.coverage_targets[i - 1]))
            throw ValidationError("cascade config: coverage_targets must be strictly ascending");
    }
    if (!(cfg.source_fraction < cfg.coverage_targets.front()))
        throw ValidationError("cascade config: source_fraction must be below the first coverage target");
    if (!(cfg.p_low_min >= 0.0 && cfg.p_low_min <= cfg.p_low_max && cfg.p_low_max <= 1.0))
        throw ValidationError("cascade config: need 0 <= p_low_min <= p_low_max <= 1");
    if (!(cfg.high_order_coefficient >= 0.0 && cfg.high_order_coefficient <= 1.0))
        throw ValidationError("cascade config: high_order_coefficient out of [0,1]");
    if (!(cfg.recovery_probability >= 0.0 && cfg.recovery_probability <= 1.0))
        throw ValidationError("cascade config: recovery_probability out of [0,1]");
    if (cfg.max_steps < 1) throw ValidationError("cascade config: max_steps must be >= 1");
    if (cfg.max_retries < 1) throw ValidationError("cascade config: max_retries must be >= 1");
}

struct Cascade {
    std::vector<int> sources;         // sorted node ids
    std::vector<int> infection_time;  // first infection step, kNeverInformed otherwise
    std::vector<double> node_rates;   // pairwise transmission rate per node
};

struct SnapshotSeries {
    std::vector<int> times;                       // capture step per snapshot, non-decreasing
    std::vector<std::vector<NodeState>> states;   // per capture, length-n
    Cascade cascade;
};

/// Draws ceil(fraction*n) distinct source nodes uniformly.
inline std::vector<int> select_sources(const Hypergraph& hg, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("select_sources: fraction must be in (0,1)");
    const int count = static_cast<int>(std::ceil(fraction * hg.n));
    if (count < 1) throw ValidationError("select_sources: fraction selects zero nodes");
    return rng.sample_without_replacement(hg.n, count);
}

/// Per-edge group-pressure probability: coefficient * informed members / size.
inline double high_order_probability(double coefficient, int informed_members, int edge_size) {
    return coefficient * static_cast<double>(informed_members) / static_cast<double>(edge_size);
}

namespace detail {

struct SimState {
    std::vector<NodeState> state;
    std::vector<int> infection_time;
    std::vector<char> ic_active;  // IC: nodes whose one pairwise round is pending
    int step = 0;
};

// Informed count for coverage: Informed plus, under SIR, Recovered.
inline int informed_count(const SimState& s) {
    int c = 0;
    for (NodeState st : s.state)
        if (st != NodeState::Uninformed) ++c;
    return c;
}

}  // namespace detail

/// One synchronous propagation round, computed from the previous round's
/// state. Order inside the round: pairwise attempts, then per-hyperedge
/// group-pressure trials, then recovery (SIS/SIR). The rng draw order is
/// fixed (node index, then neighbor/edge index) so runs are seed-exact.
inline void step(const Hypergraph& hg, const IncidenceSystem& inc, const PairwiseGraph& pairwise,
                 const CascadeConfig& cfg, const Cascade& cascade, detail::SimState& s, Rng& rng) {
    const int n = hg.n;
    const std::vector<NodeState> prev = s.state;
    const int next_step = s.step + 1;
    std::vector<char> newly_informed(static_cast<std::size_t>(n), 0);

    // (a) low-order: informed nodes push to pairwise (clique-expansion) neighbors.
    for (int v = 0; v < n; ++v) {
        if (prev[static_cast<std::size_t>(v)] != NodeState::Informed) continue;
        if (cfg.model == DiffusionModel::IC && !s.ic_active[static_cast<std::size_t>(v)]) continue;
        const double pv = cascade.node_rates[static_cast<std::size_t>(v)];
        for (int u : pairwise.adjacency[static_cast<std::size_t>(v)]) {
            if (prev[static_cast<std::size_t>(u)] != NodeState::Uninformed) continue;
            if (newly_informed[static_cast<std::size_t>(u)]) continue;  // already claimed this round
            if (rng.bernoulli(pv)) newly_informed[static_cast<std::size_t>(u)] = 1;
        }
    }

    // (b) high-order: uninformed members of each hyperedge face a group trial
    // with probability proportional to the edge's informed share. Trials are
    // independent per incident edge.
    for (int v = 0; v < n; ++v) {
        if (prev[static_cast<std::size_t>(v)] != NodeState::Uninformed) continue;
        if (newly_informed[static_cast<std::size_t>(v)]) continue;
        for (int e : inc.node_edges[static_cast<std::size_t>(v)]) {
            const auto& members = inc.edge_nodes[static_cast<std::size_t>(e)];
            int informed = 0;
            for (int u : members)
                if (prev[static_cast<std::size_t>(u)] == NodeState::Informed) ++informed;
            if (informed == 0) continue;
            const double p = high_order_probability(cfg.high_order_coefficient, informed, static_cast<int>(members.size()));
            if (rng.bernoulli(p)) {
                newly_informed[static_cast<std::size_t>(v)] = 1;
                break;
            }
        }
    }

    // (c) recovery / deactivation, evaluated on the previous round's informed set.
    if (cfg.model == DiffusionModel::SIS || cfg.model == DiffusionModel::SIR) {
        for (int v = 0; v < n; ++v) {
            if (prev[static_cast<std::size_t>(v)] != NodeState::Informed) continue;
            if (rng.bernoulli(cfg.recovery_probability))
                s.state[static_cast<std::size_t>(v)] =
                    cfg.model == DiffusionModel::SIS ? NodeState::Uninformed : NodeState::Recovered;
        }
    }
    if (cfg.model == DiffusionModel::IC)
        std::fill(s.ic_active.begin(), s.ic_active.end(), 0);

    for (int v = 0; v < n; ++v) {
        if (!newly_informed[static_cast<std::size_t>(v)]) continue;
        s.state[static_cast<std::size_t>(v)] = NodeState::Informed;
        if (s.infection_time[static_cast<std::size_t>(v)] == kNeverInformed)
            s.infection_time[static_cast<std::size_t>(v)] = next_step;
        if (cfg.model == DiffusionModel::IC) s.ic_active[static_cast<std::size_t>(v)] = 1;
    }
    s.step = next_step;
}

namespace detail {

// Single attempt: simulate until every coverage target is met or max_steps.
// Returns false if some target stayed out of reach.
inline bool try_run(const Hypergraph& hg, const IncidenceSystem& inc, const PairwiseGraph& pairwise,
                    const CascadeConfig& cfg, std::uint64_t attempt_seed, SnapshotSeries& out,
                    std::size_t& unreached_target_index) {
    const int n = hg.n;
    Rng rng(attempt_seed);

    Cascade cascade;
    cascade.sources = select_sources(hg, cfg.source_fraction, rng);
    cascade.node_rates.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v)
        cascade.node_rates[static_cast<std::size_t>(v)] = rng.uniform(cfg.p_low_min, cfg.p_low_max);

    SimState s;
    s.state.assign(static_cast<std::size_t>(n), NodeState::Uninformed);
    s.infection_time.assign(static_cast<std::size_t>(n), kNeverInformed);
    s.ic_active.assign(static_cast<std::size_t>(n), 0);
    for (int v : cascade.sources) {
        s.state[static_cast<std::size_t>(v)] = NodeState::Informed;
        s.infection_time[static_cast<std::size_t>(v)] = 0;
        s.ic_active[static_cast<std::size_t>(v)] = 1;
    }

    out.times.clear();
    out.states.clear();
    std::size_t next_target = 0;
    // Sources stay below the first target (config invariant), so capture
    // checks begin after the first step.
    while (next_target < cfg.coverage_targets.size() && s.step < cfg.max_steps) {
        step(hg, inc, pairwise, cfg, cascade, s, rng);
        const double frac = static_cast<double>(informed_count(s)) / static_cast<double>(n);
        while (next_target < cfg.coverage_targets.size() &&
               frac >= cfg.coverage_targets[next_target] - 1e-12) {
            out.times.push_back(s.step);
            out.states.push_back(s.state);
            ++next_target;
        }
    }
    if (next_target < cfg.coverage_targets.size()) {
        unreached_target_index = next_target;
        return false;
    }
    cascade.infection_time = s.infection_time;
    out.cascade = std::move(cascade);
    return true;
}

}  // namespace detail

/// Runs a cascade until every coverage target has been captured. A stalled
/// attempt is discarded and retried with a derived seed; after max_retries
/// the unreached target is reported. Note the resampling conditions the
/// output distribution on reachability.
inline SnapshotSeries run_until_coverage(const Hypergraph& hg, const IncidenceSystem& inc,
                                         const PairwiseGraph& pairwise, const CascadeConfig& cfg) {
    validate_cascade_config(cfg);
    SnapshotSeries out;
    std::size_t unreached = 0;
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        const std::uint64_t attempt_seed = derive_seed(cfg.seed, "cascade-attempt", static_cast<std::uint64_t>(attempt));
        if (detail::try_run(hg, inc, pairwise, cfg, attempt_seed, out, unreached)) return out;
    }
    throw SimulationError("cascade stalled: coverage target " +
                          std::to_string(cfg.coverage_targets[unreached]) + " unreached after " +
                          std::to_string(cfg.max_retries) + " attempts (seed " +
                          std::to_string(cfg.seed) + ")");
}

inline SnapshotSeries run_until_coverage(const Hypergraph& hg, const CascadeConfig& cfg) {
    const IncidenceSystem inc = build_incidence(hg);
    const PairwiseGraph pairwise = clique_expand(hg);
    return run_until_coverage(hg, inc, pairwise, cfg);
}

}  // namespace sdm

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "sdm/diffusion.hpp"

using namespace sdm;

namespace {

// Minimal two-node world with a single pairwise-capable hyperedge.
struct TwoNodeWorld {
    Hypergraph hg = make_hypergraph(2, {{0, 1}});
    IncidenceSystem inc = build_incidence(hg);
    PairwiseGraph pw = clique_expand(hg);
};

detail::SimState seeded_state(int n, const std::vector<int>& sources) {
    detail::SimState s;
    s.state.assign(static_cast<std::size_t>(n), NodeState::Uninformed);
    s.infection_time.assign(static_cast<std::size_t>(n), kNeverInformed);
    s.ic_active.assign(static_cast<std::size_t>(n), 0);
    for (int v : sources) {
        s.state[static_cast<std::size_t>(v)] = NodeState::Informed;
        s.infection_time[static_cast<std::size_t>(v)] = 0;
        s.ic_active[static_cast<std::size_t>(v)] = 1;
    }
    return s;
}

std::set<int> informed_set(const std::vector<NodeState>& states) {
    std::set<int> s;
    for (std::size_t v = 0; v < states.size(); ++v)
        if (states[v] != NodeState::Uninformed) s.insert(static_cast<int>(v));
    return s;
}

}  // namespace

TEST_CASE("group-pressure probability follows the informed share") {
    REQUIRE(high_order_probability(0.3, 2, 4) == 0.15);
    REQUIRE(high_order_probability(0.3, 0, 4) == 0.0);
    REQUIRE(high_order_probability(0.3, 4, 4) == 0.3);
    REQUIRE(high_order_probability(0.5, 1, 2) == 0.25);
}

TEST_CASE("source selection draws ceil(fraction*n) distinct nodes at time 0") {
    const Hypergraph hg = generate_synthetic(100, 40, 2, 5, 3);
    Rng rng(17);
    const auto sources = select_sources(hg, 0.05, rng);
    REQUIRE(sources.size() == 5);  // ceil(0.05 * 100)
    const auto more = select_sources(hg, 0.051, rng);
    REQUIRE(more.size() == 6);  // ceil rounds up

    CascadeConfig cfg;
    cfg.seed = 5;
    const SnapshotSeries series = run_until_coverage(hg, cfg);
    REQUIRE(series.cascade.sources.size() == 5);
    for (int v : series.cascade.sources)
        REQUIRE(series.cascade.infection_time[static_cast<std::size_t>(v)] == 0);
}

TEST_CASE("pairwise transmission matches its probability within 3 SE") {
    TwoNodeWorld w;
    CascadeConfig cfg;
    cfg.model = DiffusionModel::SI;
    cfg.high_order_coefficient = 0.0;  // isolate the pairwise channel
    const double p = 0.37;
    const int trials = 10000;

    int hits = 0;
    for (int t = 0; t < trials; ++t) {
        Cascade cascade;
        cascade.sources = {0};
        cascade.node_rates = {p, p};
        detail::SimState s = seeded_state(2, {0});
        Rng rng(derive_seed(99, "two-node", static_cast<std::uint64_t>(t)));
        step(w.hg, w.inc, w.pw, cfg, cascade, s, rng);
        if (s.state[1] == NodeState::Informed) ++hits;
    }
    const double p_hat = static_cast<double>(hits) / trials;
    const double se = std::sqrt(p * (1.0 - p) / trials);
    REQUIRE(std::abs(p_hat - p) <= 3.0 * se);
}

TEST_CASE("group trial fires with coefficient * informed share") {
    // one 3-node hyperedge, two members informed: p = 0.3 * 2/3 = 0.2 for the
    // remaining member; pairwise channel switched off
    const Hypergraph hg = make_hypergraph(3, {{0, 1, 2}});
    const IncidenceSystem inc = build_incidence(hg);
    const PairwiseGraph pw = clique_expand(hg);
    CascadeConfig cfg;
    cfg.model = DiffusionModel::SI;
    cfg.high_order_coefficient = 0.3;
    const double expected = 0.3 * 2.0 / 3.0;
    const int trials = 10000;

    int hits = 0;
    for (int t = 0; t < trials; ++t) {
        Cascade cascade;
        cascade.sources = {0, 1};
        cascade.node_rates = {0.0, 0.0, 0.0};
        detail::SimState s = seeded_state(3, {0, 1});
        Rng rng(derive_seed(100, "group-trial", static_cast<std::uint64_t>(t)));
        step(hg, inc, pw, cfg, cascade, s, rng);
        if (s.state[2] == NodeState::Informed) ++hits;
    }
    const double p_hat = static_cast<double>(hits) / trials;
    const double se = std::sqrt(expected * (1.0 - expected) / trials);
    REQUIRE(std::abs(p_hat - expected) <= 3.0 * se);
}

TEST_CASE("IC gives one pairwise chance, SI keeps trying") {
    TwoNodeWorld w;
    const double p = 0.5;
    const int trials = 2000;
    const int rounds = 10;

    const auto run = [&](DiffusionModel model, std::uint64_t salt) {
        CascadeConfig cfg;
        cfg.model = model;
        cfg.high_order_coefficient = 0.0;
        int hits = 0;
        for (int t = 0; t < trials; ++t) {
            Cascade cascade;
            cascade.sources = {0};
            cascade.node_rates = {p, p};
            detail::SimState s = seeded_state(2, {0});
            Rng rng(derive_seed(salt, "ic-vs-si", static_cast<std::uint64_t>(t)));
            for (int r = 0; r < rounds; ++r) step(w.hg, w.inc, w.pw, cfg, cascade, s, rng);
            if (s.state[1] == NodeState::Informed) ++hits;
        }
        return static_cast<double>(hits) / trials;
    };

    const double ic_rate = run(DiffusionModel::IC, 7);
    const double si_rate = run(DiffusionModel::SI, 8);
    REQUIRE(std::abs(ic_rate - 0.5) < 0.04);  // single shot at p=0.5
    REQUIRE(si_rate > 0.99);                  // 1 - 0.5^10
}

TEST_CASE("snapshots are nested and meet their coverage targets") {
    const Hypergraph hg = generate_synthetic(60, 25, 2, 5, 21);
    const IncidenceSystem inc = build_incidence(hg);
    const PairwiseGraph pw = clique_expand(hg);

    int checked = 0;
    for (DiffusionModel model : {DiffusionModel::IC, DiffusionModel::SI, DiffusionModel::SIR}) {
        CascadeConfig cfg;
        cfg.model = model;
        cfg.recovery_probability = model == DiffusionModel::SIR ? 0.2 : 0.0;
        for (int i = 0; i < 334; ++i) {
            cfg.seed = derive_seed(55, "nestedness", static_cast<std::uint64_t>(checked));
            const SnapshotSeries s = run_until_coverage(hg, inc, pw, cfg);
            REQUIRE(s.states.size() == cfg.coverage_targets.size());
            REQUIRE(s.times.size() == s.states.size());

            std::set<int> prev;
            for (std::size_t j = 0; j < s.states.size(); ++j) {
                const std::set<int> cur = informed_set(s.states[j]);
                const double frac = static_cast<double>(cur.size()) / hg.n;
                REQUIRE(frac >= cfg.coverage_targets[j] - 1e-12);
                REQUIRE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
                if (j > 0) REQUIRE(s.times[j] >= s.times[j - 1]);
                prev = cur;
            }
            // sources are informed in every snapshot
            for (int v : s.cascade.sources) REQUIRE(prev.count(v) == 1);
            ++checked;
        }
    }
    REQUIRE(checked == 1002);
}

TEST_CASE("infection times are consistent with capture steps") {
    const Hypergraph hg = generate_synthetic(50, 20, 2, 4, 31);
    CascadeConfig cfg;
    cfg.seed = 77;
    const SnapshotSeries s = run_until_coverage(hg, cfg);
    for (std::size_t j = 0; j < s.states.size(); ++j) {
        for (int v = 0; v < hg.n; ++v) {
            const bool informed = s.states[j][static_cast<std::size_t>(v)] != NodeState::Uninformed;
            const int t = s.cascade.infection_time[static_cast<std::size_t>(v)];
            if (informed) {
                REQUIRE(t != kNeverInformed);
                REQUIRE(t <= s.times[j]);
            }
        }
    }
}

TEST_CASE("same seed reproduces the cascade exactly") {
    const Hypergraph hg = generate_synthetic(50, 20, 2, 4, 41);
    CascadeConfig cfg;
    cfg.seed = 1234;
    const SnapshotSeries a = run_until_coverage(hg, cfg);
    const SnapshotSeries b = run_until_coverage(hg, cfg);
    REQUIRE(a.times == b.times);
    REQUIRE(a.states == b.states);
    REQUIRE(a.cascade.sources == b.cascade.sources);
    REQUIRE(a.cascade.infection_time == b.cascade.infection_time);
    REQUIRE(a.cascade.node_rates == b.cascade.node_rates);

    cfg.seed = 1235;
    const SnapshotSeries c = run_until_coverage(hg, cfg);
    REQUIRE((a.cascade.sources != c.cascade.sources || a.states != c.states));
}

TEST_CASE("a stalled cascade errors after max_retries naming the target") {
    const Hypergraph hg = generate_synthetic(30, 12, 2, 4, 51);
    CascadeConfig cfg;
    cfg.p_low_min = cfg.p_low_max = 0.0;   // no pairwise channel
    cfg.high_order_coefficient = 0.0;      // no group channel either
    cfg.max_steps = 5;
    cfg.max_retries = 3;
    cfg.seed = 2;
    REQUIRE_THROWS_MATCHES(run_until_coverage(hg, cfg), SimulationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("0.1")));
}

TEST_CASE("SIS nodes relapse to uninformed, SIR nodes stay recovered") {
    TwoNodeWorld w;
    Cascade cascade;
    cascade.sources = {0};
    cascade.node_rates = {0.0, 0.0};

    CascadeConfig sis;
    sis.model = DiffusionModel::SIS;
    sis.high_order_coefficient = 0.0;
    sis.recovery_probability = 1.0;
    detail::SimState s = seeded_state(2, {0});
    Rng rng(1);
    step(w.hg, w.inc, w.pw, sis, cascade, s, rng);
    REQUIRE(s.state[0] == NodeState::Uninformed);  // recovered == susceptible again

    CascadeConfig sir = sis;
    sir.model = DiffusionModel::SIR;
    detail::SimState s2 = seeded_state(2, {0});
    Rng rng2(1);
    step(w.hg, w.inc, w.pw, sir, cascade, s2, rng2);
    REQUIRE(s2.state[0] == NodeState::Recovered);
    // recovered is absorbing and still counts as informed
    step(w.hg, w.inc, w.pw, sir, cascade, s2, rng2);
    REQUIRE(s2.state[0] == NodeState::Recovered);
    REQUIRE(detail::informed_count(s2) == 1);
}

TEST_CASE("config validation enforces the documented ranges") {
    const auto check = [](auto mutate) {
        CascadeConfig cfg;
        mutate(cfg);
        REQUIRE_THROWS_AS(validate_cascade_config(cfg), ValidationError);
    };
    check([](CascadeConfig& c) { c.source_fraction = 0.0; });
    check([](CascadeConfig& c) { c.source_fraction = 0.2; });  // >= first target
    check([](CascadeConfig& c) { c.coverage_targets = {}; });
    check([](CascadeConfig& c) { c.coverage_targets = {0.3, 0.2}; });  // not ascending
    check([](CascadeConfig& c) { c.coverage_targets = {0.3, 0.3}; });  // not strict
    check([](CascadeConfig& c) { c.p_low_min = 0.6; c.p_low_max = 0.5; });
    check([](CascadeConfig& c) { c.high_order_coefficient = 1.5; });
    check([](CascadeConfig& c) { c.recovery_probability = -0.1; });
    check([](CascadeConfig& c) { c.max_steps = 0; });
    check([](CascadeConfig& c) { c.max_retries = 0; });
    REQUIRE_NOTHROW(validate_cascade_config(CascadeConfig{}));
}

TEST_CASE("model names round-trip") {
    for (DiffusionModel m : {DiffusionModel::IC, DiffusionModel::SI, DiffusionModel::SIS, DiffusionModel::SIR})
        REQUIRE(diffusion_model_from_string(to_string(m)) == m);
    REQUIRE_THROWS_AS(diffusion_model_from_string("SIRS"), ParseError);
}

#pragma once

// Detection metrics and the distance-center baseline.

#include <algorithm>
#include <cmath>
#include <queue>
#include <vector>

#include "sdm/diffusion.hpp"
#include "sdm/errors.hpp"
#include "sdm/hypergraph.hpp"

namespace sdm {

struct MetricSet {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    double auc = 0.0;
    double balanced_accuracy = 0.0;
};

// Rank-statistic AUC with average ranks on ties: the probability that a
// random positive outscores a random negative, counting ties as 1/2.
inline double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ContractError("auc: score/label length mismatch");
    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ContractError("auc: labels must be 0/1");
        positives += static_cast<std::size_t>(l);
    }
    if (positives == 0 || positives == n)
        throw ContractError("auc: needs at least one positive and one negative");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double p = static_cast<double>(positives);
    const double q = static_cast<double>(n - positives);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

// Thresholded confusion metrics plus AUC.  Predicted positive iff
// score > threshold.  Undefined ratios (0/0) evaluate to 0.
inline MetricSet compute_metrics(const std::vector<double>& scores,
                                 const std::vector<int>& labels, double threshold) {
    if (scores.size() != labels.size())
        throw ContractError("metrics: score/label length mismatch");
    if (scores.empty()) throw ContractError("metrics: empty input");

    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > threshold;
        const bool truth = labels[i] == 1;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
        else ++tn;
    }

    const auto ratio = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
    MetricSet m;
    m.accuracy = (tp + tn) / static_cast<double>(scores.size());
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f_score = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    m.balanced_accuracy = 0.5 * (ratio(tp, tp + fn) + ratio(tn, tn + fp));
    m.auc = rank_auc(scores, labels);  // throws on degenerate labels
    return m;
}

// Distance-center baseline on the pairwise expansion: within each connected
// component of the informed-induced subgraph, nodes are scored by
// 1 / (1 + eccentricity); uninformed nodes score 0.  Sources tend to sit
// near the center of the informed region, so low eccentricity ranks high.
inline std::vector<double> jordan_center_scores(const PairwiseGraph& graph,
                                                const std::vector<NodeState>& states) {
    const int n = graph.n;
    if (static_cast<int>(states.size()) != n)
        throw ContractError("baseline: state vector length mismatch");

    std::vector<char> informed(static_cast<std::size_t>(n), 0);
    for (int v = 0; v < n; ++v)
        informed[static_cast<std::size_t>(v)] =
            states[static_cast<std::size_t>(v)] != NodeState::Uninformed ? 1 : 0;

    std::vector<double> score(static_cast<std::size_t>(n), 0.0);
    std::vector<int> dist(static_cast<std::size_t>(n));
    for (int src = 0; src < n; ++src) {
        if (!informed[static_cast<std::size_t>(src)]) continue;
        std::fill(dist.begin(), dist.end(), -1);
        dist[static_cast<std::size_t>(src)] = 0;
        std::queue<int> frontier;
        frontier.push(src);
        int ecc = 0;
        while (!frontier.empty()) {
            const int u = frontier.front();
            frontier.pop();
            ecc = std::max(ecc, dist[static_cast<std::size_t>(u)]);
            for (int w : graph.adjacency[static_cast<std::size_t>(u)]) {
                if (!informed[static_cast<std::size_t>(w)] || dist[static_cast<std::size_t>(w)] >= 0) continue;
                dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(u)] + 1;
                frontier.push(w);
            }
        }
        score[static_cast<std::size_t>(src)] = 1.0 / (1.0 + static_cast<double>(ecc));
    }
    return score;
}

}  // namespace sdm

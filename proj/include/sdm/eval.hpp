#pragma once

// Test-time evaluation: per-cascade detection metrics, optional
// distance-center baseline, and report serialization (CSV rows plus an
// aggregate JSON document).

#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/errors.hpp"
#include "sdm/hypergraph.hpp"
#include "sdm/metrics.hpp"
#include "sdm/model.hpp"

namespace sdm {

inline constexpr const char* kReportFormat = "sdm-report-v1";

struct DetectionReport {
    int cascade = 0;
    MetricSet model;
    std::optional<MetricSet> baseline;
};

struct AggregateStats {
    MetricSet mean;
    MetricSet stddev;  // sample standard deviation (0 for a single cascade)
};

struct EvaluationReport {
    std::vector<DetectionReport> per_cascade;
    AggregateStats model;
    std::optional<AggregateStats> baseline;
    double threshold = 0.5;
    double runtime_seconds = 0.0;
};

namespace detail {

inline AggregateStats aggregate_metrics(const std::vector<MetricSet>& sets) {
    AggregateStats agg;
    const double n = static_cast<double>(sets.size());
    const auto fields = [](MetricSet& m) {
        return std::vector<double*>{&m.accuracy, &m.precision,    &m.recall,
                                    &m.f_score,  &m.auc,          &m.balanced_accuracy};
    };
    const auto cfields = [](const MetricSet& m) {
        return std::vector<const double*>{&m.accuracy, &m.precision, &m.recall,
                                          &m.f_score,  &m.auc,       &m.balanced_accuracy};
    };
    auto mean_ptrs = fields(agg.mean);
    auto sd_ptrs = fields(agg.stddev);
    for (const MetricSet& s : sets) {
        auto v = cfields(s);
        for (std::size_t i = 0; i < v.size(); ++i) *mean_ptrs[i] += *v[i];
    }
    for (double* p : mean_ptrs) *p /= n;
    if (sets.size() > 1) {
        for (const MetricSet& s : sets) {
            auto v = cfields(s);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double d = *v[i] - *mean_ptrs[i];
                *sd_ptrs[i] += d * d;
            }
        }
        for (double* p : sd_ptrs) *p = std::sqrt(*p / (n - 1.0));
    }
    return agg;
}

inline nlohmann::json metric_set_to_json(const MetricSet& m) {
    return nlohmann::json{{"accuracy", m.accuracy},
                          {"precision", m.precision},
                          {"recall", m.recall},
                          {"f_score", m.f_score},
                          {"auc", m.auc},
                          {"balanced_accuracy", m.balanced_accuracy}};
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

// Scores every cascade in `ids` with the trained detector (and, when a
// pairwise graph is supplied, with the distance-center baseline on the
// earliest capture) and aggregates the per-cascade metrics.
inline EvaluationReport evaluate_detector(const SourceDetector& model,
                                          const std::vector<TrainingSample>& samples,
                                          const std::vector<int>& ids, double threshold,
                                          const PairwiseGraph* baseline_graph) {
    if (ids.empty()) throw ContractError("evaluate: empty cascade set");
    const auto started = std::chrono::steady_clock::now();

    EvaluationReport report;
    report.threshold = threshold;
    std::vector<MetricSet> model_sets, baseline_sets;
    for (int id : ids) {
        const TrainingSample& s = samples.at(static_cast<std::size_t>(id));
        std::vector<int> labels(s.labels.size());
        for (std::size_t i = 0; i < s.labels.size(); ++i) labels[i] = s.labels[i] == 1.0 ? 1 : 0;

        DetectionReport r;
        r.cascade = id;
        r.model = compute_metrics(model.score(s.features), labels, threshold);
        model_sets.push_back(r.model);
        if (baseline_graph != nullptr) {
            r.baseline = compute_metrics(jordan_center_scores(*baseline_graph, s.baseline_states),
                                         labels, threshold);
            baseline_sets.push_back(*r.baseline);
        }
        report.per_cascade.push_back(std::move(r));
    }
    report.model = detail::aggregate_metrics(model_sets);
    if (!baseline_sets.empty()) report.baseline = detail::aggregate_metrics(baseline_sets);
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

// One CSV row per cascade; baseline columns appear only when present.
inline std::string report_to_csv(const EvaluationReport& report) {
    const bool with_baseline = report.baseline.has_value();
    std::ostringstream os;
    os << "cascade,accuracy,precision,recall,f_score,auc,balanced_accuracy";
    if (with_baseline)
        os << ",baseline_accuracy,baseline_precision,baseline_recall,baseline_f_score,"
              "baseline_auc,baseline_balanced_accuracy";
    os << "\n";
    for (const DetectionReport& r : report.per_cascade) {
        const auto row = [&os](const MetricSet& m) {
            os << ',' << detail::format_double(m.accuracy) << ',' << detail::format_double(m.precision)
               << ',' << detail::format_double(m.recall) << ',' << detail::format_double(m.f_score)
               << ',' << detail::format_double(m.auc) << ','
               << detail::format_double(m.balanced_accuracy);
        };
        os << r.cascade;
        row(r.model);
        if (with_baseline) row(*r.baseline);
        os << "\n";
    }
    return os.str();
}

inline nlohmann::json report_to_json(const EvaluationReport& report) {
    nlohmann::json j{{"format", kReportFormat},
                     {"cascades", report.per_cascade.size()},
                     {"threshold", report.threshold},
                     {"model",
                      {{"mean", detail::metric_set_to_json(report.model.mean)},
                       {"stddev", detail::metric_set_to_json(report.model.stddev)}}},
                     {"runtime_seconds", report.runtime_seconds}};
    if (report.baseline)
        j["baseline"] = {{"mean", detail::metric_set_to_json(report.baseline->mean)},
                         {"stddev", detail::metric_set_to_json(report.baseline->stddev)}};
    else
        j["baseline"] = nullptr;
    return j;
}

}  // namespace sdm

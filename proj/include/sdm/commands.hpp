#pragma once

// The four toolkit entry points (generate / train / eval / sweep) as library
// functions, plus the run configuration they share.  The CLI is a thin
// wrapper around these; tests call them directly.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sdm/checkpoint.hpp"
#include "sdm/diffusion.hpp"
#include "sdm/errors.hpp"
#include "sdm/eval.hpp"
#include "sdm/hypergraph.hpp"
#include "sdm/log.hpp"
#include "sdm/metrics.hpp"
#include "sdm/model.hpp"
#include "sdm/rng.hpp"
#include "sdm/snapshot_io.hpp"

namespace sdm {

struct HypergraphSpec {
    int n = 200;
    int m = 80;
    int size_min = 2;
    int size_max = 5;
    std::string path;  // load from file instead of generating, when set
};

struct SweepSpec {
    std::vector<double> initial_coverages = {0.10, 0.20, 0.30};
    std::vector<double> intervals = {0.05, 0.10, 0.15, 0.20, 0.25};
    int snapshots = 3;
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string out;
    std::string data;        // dataset directory (train / eval)
    std::string checkpoint;  // checkpoint path (eval)
    HypergraphSpec hypergraph;
    int cascade_count = 300;
    CascadeConfig cascade;
    ModelConfig model;
    double threshold = 0.5;
    bool baseline = false;
    int jobs = 1;
    SweepSpec sweep;
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"out", c.out},
        {"data", c.data},
        {"checkpoint", c.checkpoint},
        {"hypergraph",
         {{"n", c.hypergraph.n},
          {"m", c.hypergraph.m},
          {"size_min", c.hypergraph.size_min},
          {"size_max", c.hypergraph.size_max},
          {"path", c.hypergraph.path}}},
        {"cascade_count", c.cascade_count},
        {"cascades", cascade_config_to_json(c.cascade)},
        {"model", model_config_to_json(c.model)},
        {"threshold", c.threshold},
        {"baseline", c.baseline},
        {"jobs", c.jobs},
        {"sweep",
         {{"initial_coverages", c.sweep.initial_coverages},
          {"intervals", c.sweep.intervals},
          {"snapshots", c.sweep.snapshots}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("run config: expected a JSON object");
    RunConfig c;
    const nlohmann::json known = run_config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ValidationError("run config: unknown key '" + key + "'");
        (void)value;
    }
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
    c.data = j.value("data", c.data);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    if (j.contains("hypergraph")) {
        const auto& h = j.at("hypergraph");
        for (const auto& [key, value] : h.items()) {
            if (!known.at("hypergraph").contains(key))
                throw ValidationError("run config: unknown key 'hypergraph." + key + "'");
            (void)value;
        }
        c.hypergraph.n = h.value("n", c.hypergraph.n);
        c.hypergraph.m = h.value("m", c.hypergraph.m);
        c.hypergraph.size_min = h.value("size_min", c.hypergraph.size_min);
        c.hypergraph.size_max = h.value("size_max", c.hypergraph.size_max);
        c.hypergraph.path = h.value("path", c.hypergraph.path);
    }
    c.cascade_count = j.value("cascade_count", c.cascade_count);
    if (j.contains("cascades")) c.cascade = cascade_config_from_json(j.at("cascades"));
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    c.threshold = j.value("threshold", c.threshold);
    c.baseline = j.value("baseline", c.baseline);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        for (const auto& [key, value] : s.items()) {
            if (!known.at("sweep").contains(key))
                throw ValidationError("run config: unknown key 'sweep." + key + "'");
            (void)value;
        }
        if (s.contains("initial_coverages"))
            c.sweep.initial_coverages = s.at("initial_coverages").get<std::vector<double>>();
        if (s.contains("intervals"))
            c.sweep.intervals = s.at("intervals").get<std::vector<double>>();
        c.sweep.snapshots = s.value("snapshots", c.sweep.snapshots);
    }
    if (c.cascade_count < 2) throw ValidationError("run config: cascade_count must be >= 2");
    if (c.jobs < 1) throw ValidationError("run config: jobs must be >= 1");
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0))
        throw ValidationError("run config: threshold out of [0,1]");
    if (c.sweep.snapshots < 1) throw ValidationError("run config: sweep.snapshots must be >= 1");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return run_config_from_json(j);
}

// Writes via a temp file in the same directory, then renames into place, so
// readers never observe a partially written artifact.
inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

struct Dataset {
    Hypergraph hypergraph;
    IncidenceSystem incidence;
    PairwiseGraph pairwise;
    std::vector<SnapshotSeries> series;
    std::vector<CascadeConfig> cascade_configs;  // per cascade (seed differs)
};

inline Hypergraph obtain_hypergraph(const RunConfig& cfg) {
    if (!cfg.hypergraph.path.empty()) return load_hypergraph(cfg.hypergraph.path);
    return generate_synthetic(cfg.hypergraph.n, cfg.hypergraph.m, cfg.hypergraph.size_min,
                              cfg.hypergraph.size_max, derive_seed(cfg.seed, "hypergraph"));
}

// Simulates `count` cascades with per-cascade derived seeds.  `jobs` splits
// the work across threads; results land in index order, so the output is
// identical for any thread count.
inline std::vector<SnapshotSeries> simulate_cascades(const Dataset& data, CascadeConfig base,
                                                     std::uint64_t root_seed, int count, int jobs,
                                                     std::vector<CascadeConfig>* configs_out) {
    std::vector<SnapshotSeries> out(static_cast<std::size_t>(count));
    std::vector<CascadeConfig> cfgs(static_cast<std::size_t>(count), base);
    for (int i = 0; i < count; ++i)
        cfgs[static_cast<std::size_t>(i)].seed =
            derive_seed(root_seed, "cascade", static_cast<std::uint64_t>(i));

    const auto worker = [&](int begin, int step) {
        for (int i = begin; i < count; i += step)
            out[static_cast<std::size_t>(i)] = run_until_coverage(
                data.hypergraph, data.incidence, data.pairwise, cfgs[static_cast<std::size_t>(i)]);
    };
    const int threads = std::max(1, std::min(jobs, count));
    if (threads == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        std::mutex error_mutex;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    worker(t, threads);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        for (std::thread& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    if (configs_out != nullptr) *configs_out = std::move(cfgs);
    return out;
}

inline Dataset build_dataset(const RunConfig& cfg) {
    Dataset d;
    d.hypergraph = obtain_hypergraph(cfg);
    d.incidence = build_incidence(d.hypergraph);
    d.pairwise = clique_expand(d.hypergraph);
    d.series = simulate_cascades(d, cfg.cascade, cfg.seed, cfg.cascade_count, cfg.jobs,
                                 &d.cascade_configs);
    return d;
}

inline Dataset load_dataset(const std::string& dir) {
    const std::filesystem::path root(dir);
    const std::filesystem::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kManifestFormat)
        throw ParseError(manifest_path.string() + ": unsupported manifest format");

    Dataset d;
    d.hypergraph = load_hypergraph((root / j.at("hypergraph").get<std::string>()).string());
    d.incidence = build_incidence(d.hypergraph);
    d.pairwise = clique_expand(d.hypergraph);
    for (const auto& rel : j.at("cascades")) {
        CascadeConfig ccfg;
        d.series.push_back(load_snapshot_series((root / rel.get<std::string>()).string(), &ccfg));
        d.cascade_configs.push_back(ccfg);
        if (static_cast<int>(d.series.back().cascade.infection_time.size()) != d.hypergraph.n)
            throw ValidationError("dataset: cascade node count does not match hypergraph");
    }
    if (d.series.size() < 2) throw ValidationError("dataset: need at least two cascades");
    return d;
}

inline std::vector<TrainingSample> make_samples(const Dataset& d, int pe_width) {
    std::vector<TrainingSample> samples;
    samples.reserve(d.series.size());
    for (const SnapshotSeries& s : d.series) samples.push_back(make_sample(d.incidence, s, pe_width));
    return samples;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline void write_resolved_config(const RunConfig& cfg) {
    atomic_write_text(std::filesystem::path(cfg.out) / "config.json",
                      run_config_to_json(cfg).dump(2) + "\n");
}

inline void cmd_generate(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ValidationError("generate: --out is required");
    const auto started = std::chrono::steady_clock::now();
    Dataset d = build_dataset(cfg);

    const std::filesystem::path out(cfg.out);
    std::filesystem::create_directories(out / "cascades");
    save_hypergraph(d.hypergraph, (out / "hypergraph.txt").string());

    nlohmann::json cascade_paths = nlohmann::json::array();
    for (std::size_t i = 0; i < d.series.size(); ++i) {
        std::ostringstream name;
        name << "cascades/cascade_" << std::setw(4) << std::setfill('0') << i << ".json";
        cascade_paths.push_back(name.str());
        atomic_write_text(out / name.str(),
                          snapshot_series_to_json(d.series[i], d.cascade_configs[i]).dump(2) + "\n");
    }
    const nlohmann::json manifest{{"format", kManifestFormat},
                                  {"hypergraph", "hypergraph.txt"},
                                  {"cascades", std::move(cascade_paths)},
                                  {"seed", cfg.seed},
                                  {"cascade_count", cfg.cascade_count}};
    atomic_write_text(out / "manifest.json", manifest.dump(2) + "\n");
    write_resolved_config(cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log_info("generate: wrote " + std::to_string(d.series.size()) + " cascades to " + cfg.out +
             " in " + std::to_string(secs) + "s");
}

inline std::string train_log_csv(const TrainResult& result) {
    std::ostringstream os;
    os << "epoch,train_loss,val_f_score\n";
    for (const EpochRecord& r : result.history)
        os << r.epoch << ',' << detail::format_double(r.train_loss) << ','
           << detail::format_double(r.val_f_score) << "\n";
    return os.str();
}

inline nlohmann::json checkpoint_config_json(const ModelConfig& mc, const Dataset& d) {
    return nlohmann::json{{"model", model_config_to_json(mc)},
                          {"nodes", d.hypergraph.n},
                          {"edges", d.hypergraph.m()},
                          {"cascade_count", d.series.size()}};
}

inline TrainResult cmd_train(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ValidationError("train: --out is required");
    if (cfg.data.empty()) throw ValidationError("train: a dataset directory is required");
    Dataset d = load_dataset(cfg.data);

    ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    std::vector<TrainingSample> samples = make_samples(d, mc.pe_width);
    SourceDetector model(d.incidence, d.hypergraph.edge_weights, mc);
    const DatasetSplit split = split_dataset(static_cast<int>(samples.size()), mc.train_fraction,
                                             mc.val_fraction, mc.seed);
    log_info("train: " + std::to_string(split.train.size()) + " train / " +
             std::to_string(split.val.size()) + " val / " + std::to_string(split.test.size()) +
             " test cascades");
    TrainResult result = train_detector(model, samples, split);
    log_info("train: best epoch " + std::to_string(result.best_epoch) + ", val F-Score " +
             std::to_string(result.best_val_f));

    const std::filesystem::path out(cfg.out);
    std::filesystem::create_directories(out);
    {
        std::vector<Parameter*> params = model.parameters();
        const nlohmann::json ckpt =
            checkpoint_to_json(params, checkpoint_config_json(mc, d));
        atomic_write_text(out / "checkpoint.json", ckpt.dump(2) + "\n");
    }
    atomic_write_text(out / "train_log.csv", train_log_csv(result));
    write_resolved_config(cfg);
    return result;
}

inline EvaluationReport cmd_eval(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ValidationError("eval: --out is required");
    if (cfg.data.empty()) throw ValidationError("eval: a dataset directory is required");
    if (cfg.checkpoint.empty()) throw ValidationError("eval: a checkpoint path is required");
    Dataset d = load_dataset(cfg.data);

    nlohmann::json ckpt_cfg = load_checkpoint_config(cfg.checkpoint);
    if (!ckpt_cfg.is_object() || !ckpt_cfg.contains("model"))
        throw ContractError("eval: checkpoint carries no model config");
    const ModelConfig mc = model_config_from_json(ckpt_cfg.at("model"));
    if (ckpt_cfg.value("nodes", d.hypergraph.n) != d.hypergraph.n)
        throw ContractError("eval: checkpoint was trained on a different hypergraph (node count " +
                            std::to_string(ckpt_cfg.value("nodes", -1)) + " vs " +
                            std::to_string(d.hypergraph.n) + ")");

    std::vector<TrainingSample> samples = make_samples(d, mc.pe_width);
    SourceDetector model(d.incidence, d.hypergraph.edge_weights, mc);
    {
        std::vector<Parameter*> params = model.parameters();
        load_checkpoint(cfg.checkpoint, params);
    }
    const DatasetSplit split = split_dataset(static_cast<int>(samples.size()), mc.train_fraction,
                                             mc.val_fraction, mc.seed);
    const PairwiseGraph* baseline = cfg.baseline ? &d.pairwise : nullptr;
    EvaluationReport report =
        evaluate_detector(model, samples, split.test, cfg.threshold, baseline);
    log_info("eval: " + std::to_string(split.test.size()) + " test cascades, mean F-Score " +
             std::to_string(report.model.mean.f_score) + ", mean AUC " +
             std::to_string(report.model.mean.auc));

    const std::filesystem::path out(cfg.out);
    std::filesystem::create_directories(out);
    atomic_write_text(out / "per_cascade.csv", report_to_csv(report));
    atomic_write_text(out / "aggregate.json", report_to_json(report).dump(2) + "\n");
    write_resolved_config(cfg);
    return report;
}

struct SweepRow {
    double initial_coverage = 0.0;
    double interval = 0.0;
    std::uint64_t seed = 0;
    double f_score = 0.0;
    double auc = 0.0;
    double acc = 0.0;
    double runtime_s = 0.0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "initial_coverage,interval,seed,f_score,auc,acc,runtime_s\n";
    for (const SweepRow& r : rows)
        os << detail::format_double(r.initial_coverage) << ',' << detail::format_double(r.interval)
           << ',' << r.seed << ',' << detail::format_double(r.f_score) << ','
           << detail::format_double(r.auc) << ',' << detail::format_double(r.acc) << ','
           << detail::format_double(r.runtime_s) << "\n";
    return os.str();
}

// Full pipeline per grid cell (snapshot schedule = coverage, coverage +
// interval, ...), each cell on its own derived seed.  Returns the rows in
// grid order.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ValidationError("sweep: --out is required");
    std::vector<SweepRow> rows;
    std::uint64_t cell = 0;
    for (double coverage : cfg.sweep.initial_coverages) {
        for (double interval : cfg.sweep.intervals) {
            const auto started = std::chrono::steady_clock::now();
            RunConfig cell_cfg = cfg;
            cell_cfg.seed = derive_seed(cfg.seed, "sweep-cell", cell);
            cell_cfg.cascade.coverage_targets.clear();
            for (int s = 0; s < cfg.sweep.snapshots; ++s) {
                const double target = coverage + interval * static_cast<double>(s);
                if (target > 1.0)
                    throw ValidationError("sweep: snapshot schedule exceeds full coverage");
                cell_cfg.cascade.coverage_targets.push_back(target);
            }
            validate_cascade_config(cell_cfg.cascade);

            Dataset d = build_dataset(cell_cfg);
            ModelConfig mc = cell_cfg.model;
            mc.seed = cell_cfg.seed;
            std::vector<TrainingSample> samples = make_samples(d, mc.pe_width);
            SourceDetector model(d.incidence, d.hypergraph.edge_weights, mc);
            const DatasetSplit split = split_dataset(static_cast<int>(samples.size()),
                                                     mc.train_fraction, mc.val_fraction, mc.seed);
            train_detector(model, samples, split);
            const EvaluationReport report =
                evaluate_detector(model, samples, split.test, cfg.threshold, nullptr);

            SweepRow row;
            row.initial_coverage = coverage;
            row.interval = interval;
            row.seed = cell_cfg.seed;
            row.f_score = report.model.mean.f_score;
            row.auc = report.model.mean.auc;
            row.acc = report.model.mean.accuracy;
            row.runtime_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            rows.push_back(row);
            log_info("sweep: coverage " + std::to_string(coverage) + ", interval " +
                     std::to_string(interval) + " -> F-Score " + std::to_string(row.f_score));
            ++cell;
        }
    }
    const std::filesystem::path out(cfg.out);
    std::filesystem::create_directories(out);
    atomic_write_text(out / "sweep.csv", sweep_csv(rows));
    write_resolved_config(cfg);
    return rows;
}

}  // namespace sdm

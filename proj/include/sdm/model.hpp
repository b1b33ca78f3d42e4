#pragma once

// End-to-end source detector: snapshot encoder -> stacked graph-aware SSM
// blocks over the reversed snapshot sequence -> per-node score head.
// Also hosts the class-balanced loss, the Adam optimizer, dataset splitting
// and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdm/autodiff.hpp"
#include "sdm/diffusion.hpp"
#include "sdm/errors.hpp"
#include "sdm/features.hpp"
#include "sdm/graph_ssm.hpp"
#include "sdm/layers.hpp"
#include "sdm/metrics.hpp"
#include "sdm/rng.hpp"
#include "sdm/tensor.hpp"

namespace sdm {

struct ModelConfig {
    int pe_width = 8;    // positional-encoding columns (k)
    int hgnn_width = 32; // encoder output channels, also the SSM channel count
    int blocks = 2;
    int d_state = 16;
    int edge_head_hidden = 64;
    bool selective = true;
    bool graph_coupling = true;
    bool learned_edge_weights = true;
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    int epochs = 200;
    int batch_size = 16;
    double train_fraction = 0.8; // cascades used for training (rest is test)
    double val_fraction = 0.1;   // share of training cascades held out
    int patience = 30;           // early-stop patience on validation F-Score
    std::uint64_t seed = 0;

    int input_width() const { return 2 + pe_width; }
};

inline void validate_model_config(const ModelConfig& c) {
    if (c.pe_width < 0) throw ValidationError("model config: pe_width must be >= 0");
    if (c.hgnn_width <= 0 || c.blocks <= 0 || c.d_state <= 0 || c.edge_head_hidden <= 0)
        throw ValidationError("model config: widths must be positive");
    if (!(c.learning_rate > 0.0)) throw ValidationError("model config: learning_rate must be positive");
    if (c.weight_decay < 0.0) throw ValidationError("model config: weight_decay must be >= 0");
    if (c.epochs <= 0 || c.batch_size <= 0 || c.patience < 0)
        throw ValidationError("model config: epochs/batch_size/patience out of range");
    if (!(c.train_fraction > 0.0) || !(c.train_fraction < 1.0))
        throw ValidationError("model config: train_fraction must be in (0, 1)");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0)
        throw ValidationError("model config: val_fraction must be in [0, 1)");
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"pe_width", c.pe_width},
                          {"hgnn_width", c.hgnn_width},
                          {"blocks", c.blocks},
                          {"d_state", c.d_state},
                          {"edge_head_hidden", c.edge_head_hidden},
                          {"selective", c.selective},
                          {"graph_coupling", c.graph_coupling},
                          {"learned_edge_weights", c.learned_edge_weights},
                          {"learning_rate", c.learning_rate},
                          {"weight_decay", c.weight_decay},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"train_fraction", c.train_fraction},
                          {"val_fraction", c.val_fraction},
                          {"patience", c.patience},
                          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("model config: expected a JSON object");
    ModelConfig c;
    const nlohmann::json defaults = model_config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key))
            throw ValidationError("model config: unknown key '" + key + "'");
        (void)value;
    }
    c.pe_width = j.value("pe_width", c.pe_width);
    c.hgnn_width = j.value("hgnn_width", c.hgnn_width);
    c.blocks = j.value("blocks", c.blocks);
    c.d_state = j.value("d_state", c.d_state);
    c.edge_head_hidden = j.value("edge_head_hidden", c.edge_head_hidden);
    c.selective = j.value("selective", c.selective);
    c.graph_coupling = j.value("graph_coupling", c.graph_coupling);
    c.learned_edge_weights = j.value("learned_edge_weights", c.learned_edge_weights);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    validate_model_config(c);
    return c;
}

// One cascade turned into model inputs: per-capture feature tensors plus the
// 0/1 source labels.  The earliest capture's raw states are kept around for
// snapshot-based baselines.
struct TrainingSample {
    std::vector<Tensor> features;
    std::vector<double> labels;
    std::vector<NodeState> baseline_states;
};

inline TrainingSample make_sample(const IncidenceSystem& inc, const SnapshotSeries& series,
                                  int pe_width) {
    TrainingSample s;
    for (const FeatureMatrix& f : assemble_features(inc, series, pe_width))
        s.features.push_back(Tensor::from_dense(f));
    s.labels.assign(static_cast<std::size_t>(inc.n), 0.0);
    for (int v : series.cascade.sources) s.labels[static_cast<std::size_t>(v)] = 1.0;
    s.baseline_states = series.states.front();
    return s;
}

// xi = |sources| / |non-sources|: weight applied to the non-source term so
// both classes contribute comparably to the loss.
inline double balance_coefficient(int n, int sources) {
    if (sources <= 0 || sources >= n)
        throw ContractError("balance coefficient undefined: cascade needs both classes");
    return static_cast<double>(sources) / static_cast<double>(n - sources);
}

inline constexpr double kProbabilityClamp = 1e-7;

// Class-balanced cross-entropy plus L2 penalty on every trainable tensor:
//   sum_{v in s} -log p_v  +  xi * sum_{v not in s} -log(1 - p_v)  +  wd * sum ||w||^2
inline Value balanced_loss(Tape& tape, Value scores, const std::vector<double>& labels,
                           const std::vector<Parameter*>& params, double weight_decay) {
    const Tensor& ts = tape.value(scores);
    const int n = static_cast<int>(labels.size());
    if (ts.rank() != 2 || ts.shape[0] != n || ts.shape[1] != 1)
        throw ContractError("balanced_loss: scores must be (n, 1)");
    int sources = 0;
    for (double l : labels) {
        if (l != 0.0 && l != 1.0) throw ContractError("balanced_loss: labels must be 0/1");
        if (l == 1.0) ++sources;
    }
    const double xi = balance_coefficient(n, sources);

    Tensor pos({n, 1}), neg({n, 1});
    for (int v = 0; v < n; ++v) {
        pos.at(v, 0) = labels[static_cast<std::size_t>(v)];
        neg.at(v, 0) = (1.0 - labels[static_cast<std::size_t>(v)]) * xi;
    }
    Value p = tape.clamp(scores, kProbabilityClamp, 1.0 - kProbabilityClamp);
    Value ones = tape.constant([n] {
        Tensor t({n, 1});
        std::fill(t.data.begin(), t.data.end(), 1.0);
        return t;
    }());
    Value ce = tape.add(tape.mul(tape.constant(std::move(pos)), tape.log(p)),
                        tape.mul(tape.constant(std::move(neg)), tape.log(tape.sub(ones, p))));
    Value loss = tape.scale(tape.sum_all(ce), -1.0);

    if (weight_decay > 0.0) {
        Value reg{};
        bool first = true;
        for (Parameter* w : params) {
            Value wv = tape.param(*w);
            Value sq = tape.sum_all(tape.mul(wv, wv));
            reg = first ? sq : tape.add(reg, sq);
            first = false;
        }
        if (!first) loss = tape.add(loss, tape.scale(reg, weight_decay));
    }
    return loss;
}

class SourceDetector {
public:
    SourceDetector(const IncidenceSystem& inc, const std::vector<double>& edge_weights,
                   ModelConfig cfg)
        : cfg_(std::move(cfg)), ops_(build_graph_operators(inc, edge_weights)) {
        validate_model_config(cfg_);
        Rng rng(derive_seed(cfg_.seed, "model-init"));
        hgnn_ = HGNNLayer(cfg_.input_width(), cfg_.hgnn_width, ops_.propagation, rng, "hgnn.weight");
        SSMBlockConfig bc;
        bc.channels = cfg_.hgnn_width;
        bc.d_state = cfg_.d_state;
        bc.edge_head_hidden = cfg_.edge_head_hidden;
        bc.selective = cfg_.selective;
        bc.graph_coupling = cfg_.graph_coupling;
        bc.learned_edge_weights = cfg_.learned_edge_weights;
        blocks_.reserve(static_cast<std::size_t>(cfg_.blocks));
        for (int b = 0; b < cfg_.blocks; ++b)
            blocks_.emplace_back(bc, rng, "block" + std::to_string(b));
        const double r = 1.0 / std::sqrt(static_cast<double>(cfg_.hgnn_width));
        readout_w_ = make_uniform_parameter("readout.w", {cfg_.hgnn_width, 1}, r, rng);
        readout_b_ = make_uniform_parameter("readout.b", {1, 1}, r, rng);
    }

    // features: one (n, 2 + pe_width) tensor per capture, oldest first.
    // Returns per-node scores (n, 1) in (0, 1).
    Value forward(Tape& tape, const std::vector<Tensor>& features) const {
        if (features.empty()) throw ContractError("detector: empty snapshot sequence");
        std::vector<Value> seq;
        seq.reserve(features.size());
        for (const Tensor& f : features) {
            if (f.rank() != 2 || f.shape[0] != ops_.n || f.shape[1] != cfg_.input_width())
                throw ContractError("detector: feature tensor has wrong shape");
            seq.push_back(hgnn_.forward(tape, tape.constant(f)));
        }
        std::reverse(seq.begin(), seq.end());  // scan runs latest capture -> earliest
        for (const SSMBlock& block : blocks_)
            seq = graph_scan(tape, block, seq, ops_).outputs;
        Value last = seq.back();  // final scan step, aligned with the earliest capture
        auto& self = const_cast<SourceDetector&>(*this);
        return tape.sigmoid(tape.add_rowvec(tape.matmul(last, tape.param(self.readout_w_)),
                                            tape.param(self.readout_b_)));
    }

    std::vector<double> score(const std::vector<Tensor>& features) const {
        Tape tape;
        Value s = forward(tape, features);
        return tape.value(s).data;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps = {&hgnn_.weight};
        for (SSMBlock& b : blocks_)
            for (Parameter* p : b.parameters()) ps.push_back(p);
        ps.push_back(&readout_w_);
        ps.push_back(&readout_b_);
        return ps;
    }

    const ModelConfig& config() const { return cfg_; }
    const GraphOperators& operators() const { return ops_; }

private:
    ModelConfig cfg_;
    GraphOperators ops_;
    HGNNLayer hgnn_;
    std::vector<SSMBlock> blocks_;
    Parameter readout_w_, readout_b_;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Parameter*>& params) {
        if (slots_.empty()) {
            slots_.reserve(params.size());
            for (Parameter* p : params) slots_.push_back({Tensor(p->value.shape), Tensor(p->value.shape)});
        }
        if (slots_.size() != params.size())
            throw ContractError("adam: parameter set changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Parameter& p = *params[i];
            Slot& s = slots_[i];
            for (std::size_t k = 0; k < p.value.data.size(); ++k) {
                const double g = p.grad.data[k];
                s.m.data[k] = beta1_ * s.m.data[k] + (1.0 - beta1_) * g;
                s.v.data[k] = beta2_ * s.v.data[k] + (1.0 - beta2_) * g * g;
                const double mhat = s.m.data[k] / bc1;
                const double vhat = s.v.data[k] / bc2;
                p.value.data[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct Slot {
        Tensor m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Slot> slots_;
};

struct DatasetSplit {
    std::vector<int> train, val, test;
};

// Shuffled cascade-level split: `train_fraction` of the cascades train the
// model (with `val_fraction` of those held out for early stopping), the rest
// are never seen before test time.
inline DatasetSplit split_dataset(int count, double train_fraction, double val_fraction,
                                  std::uint64_t seed) {
    if (count <= 1) throw ContractError("split: need at least two cascades");
    std::vector<int> ids(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) ids[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, "dataset-split"));
    for (int i = count - 1; i > 0; --i)
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(rng.uniform_int(0, i))]);

    const int n_train_total = std::max(1, static_cast<int>(std::floor(train_fraction * count)));
    const int n_val = std::min(n_train_total - 1,
                               static_cast<int>(std::floor(val_fraction * n_train_total)));
    DatasetSplit s;
    for (int i = 0; i < count; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (i < n_train_total - n_val) s.train.push_back(id);
        else if (i < n_train_total) s.val.push_back(id);
        else s.test.push_back(id);
    }
    return s;
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f_score = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    DatasetSplit split;
    int best_epoch = -1;
    double best_val_f = 0.0;
    bool early_stopped = false;
};

inline constexpr double kValidationThreshold = 0.5;

inline double mean_f_score(const SourceDetector& model, const std::vector<TrainingSample>& samples,
                           const std::vector<int>& ids) {
    double acc = 0.0;
    for (int id : ids) {
        const TrainingSample& s = samples[static_cast<std::size_t>(id)];
        std::vector<double> scores = model.score(s.features);
        std::vector<int> labels(s.labels.size());
        for (std::size_t i = 0; i < s.labels.size(); ++i) labels[i] = s.labels[i] == 1.0 ? 1 : 0;
        acc += compute_metrics(scores, labels, kValidationThreshold).f_score;
    }
    return acc / static_cast<double>(ids.size());
}

// Minibatch Adam over the training split with early stopping on validation
// F-Score; the best-scoring parameter snapshot is restored before returning.
inline TrainResult train_detector(SourceDetector& model, const std::vector<TrainingSample>& samples,
                                  const DatasetSplit& split) {
    const ModelConfig& cfg = model.config();
    if (split.train.empty()) throw ContractError("train: empty training split");
    std::vector<Parameter*> params = model.parameters();
    AdamOptimizer opt(cfg.learning_rate);

    TrainResult result;
    result.split = split;
    double best_monitor = -std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_values;
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = split.train;
        Rng rng(derive_seed(cfg.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (Parameter* p : params) p->zero_grad();
            for (std::size_t i = start; i < stop; ++i) {
                const TrainingSample& s = samples[static_cast<std::size_t>(order[i])];
                Tape tape;
                Value scores = model.forward(tape, s.features);
                Value loss = balanced_loss(tape, scores, s.labels, params, cfg.weight_decay);
                loss_sum += tape.value(loss).data[0];
                tape.backward(loss);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (Parameter* p : params)
                for (double& g : p->grad.data) g *= inv;
            opt.step(params);
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());
        if (!std::isfinite(train_loss))
            throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));

        const double val_f = split.val.empty() ? 0.0 : mean_f_score(model, samples, split.val);
        result.history.push_back({epoch, train_loss, val_f});

        const double monitor = split.val.empty() ? -train_loss : val_f;
        if (monitor > best_monitor) {
            best_monitor = monitor;
            result.best_epoch = epoch;
            result.best_val_f = val_f;
            best_values.clear();
            for (Parameter* p : params) best_values.push_back(p->value);
            since_best = 0;
        } else if (++since_best > cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }

    if (!best_values.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
    return result;
}

}  // namespace sdm

#pragma once

// Versioned JSON serialization for cascade snapshot series ("sds-v1") and
// dataset manifests ("sds-manifest-v1").

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/diffusion.hpp"
#include "sdm/errors.hpp"

namespace sdm {

inline constexpr const char* kSnapshotFormat = "sds-v1";
inline constexpr const char* kManifestFormat = "sds-manifest-v1";

inline nlohmann::json cascade_config_to_json(const CascadeConfig& c) {
    return nlohmann::json{{"model", to_string(c.model)},
                          {"source_fraction", c.source_fraction},
                          {"p_low_min", c.p_low_min},
                          {"p_low_max", c.p_low_max},
                          {"high_order_coefficient", c.high_order_coefficient},
                          {"recovery_probability", c.recovery_probability},
                          {"seed", c.seed},
                          {"coverage_targets", c.coverage_targets},
                          {"max_steps", c.max_steps},
                          {"max_retries", c.max_retries}};
}

inline CascadeConfig cascade_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("cascade config: expected a JSON object");
    CascadeConfig c;
    const nlohmann::json known = cascade_config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key))
            throw ValidationError("cascade config: unknown key '" + key + "'");
        (void)value;
    }
    if (j.contains("model")) c.model = diffusion_model_from_string(j.at("model").get<std::string>());
    c.source_fraction = j.value("source_fraction", c.source_fraction);
    c.p_low_min = j.value("p_low_min", c.p_low_min);
    c.p_low_max = j.value("p_low_max", c.p_low_max);
    c.high_order_coefficient = j.value("high_order_coefficient", c.high_order_coefficient);
    c.recovery_probability = j.value("recovery_probability", c.recovery_probability);
    c.seed = j.value("seed", c.seed);
    if (j.contains("coverage_targets"))
        c.coverage_targets = j.at("coverage_targets").get<std::vector<double>>();
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_retries = j.value("max_retries", c.max_retries);
    validate_cascade_config(c);
    return c;
}

inline nlohmann::json snapshot_series_to_json(const SnapshotSeries& s, const CascadeConfig& cfg) {
    nlohmann::json states = nlohmann::json::array();
    for (const auto& snap : s.states) {
        nlohmann::json row = nlohmann::json::array();
        for (NodeState st : snap) row.push_back(static_cast<int>(st));
        states.push_back(std::move(row));
    }
    nlohmann::json itime = nlohmann::json::array();
    for (int t : s.cascade.infection_time) {
        if (t == kNeverInformed) itime.push_back(nullptr);
        else itime.push_back(t);
    }
    return nlohmann::json{{"format", kSnapshotFormat},
                          {"times", s.times},
                          {"states", std::move(states)},
                          {"sources", s.cascade.sources},
                          {"infection_time", std::move(itime)},
                          {"config", cascade_config_to_json(cfg)}};
}

inline SnapshotSeries snapshot_series_from_json(const nlohmann::json& j, CascadeConfig* cfg_out) {
    if (!j.is_object()) throw ParseError("snapshot series: expected a JSON object");
    for (const std::string key : {"format", "times", "states", "sources", "infection_time", "config"})
        if (!j.contains(key)) throw ParseError("snapshot series: missing key '" + key + "'");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "format" && key != "times" && key != "states" && key != "sources" &&
            key != "infection_time" && key != "config")
            throw ParseError("snapshot series: unknown key '" + key + "'");
    }
    if (j.at("format").get<std::string>() != kSnapshotFormat)
        throw ParseError("snapshot series: unsupported format tag '" +
                         j.at("format").get<std::string>() + "'");

    SnapshotSeries s;
    s.times = j.at("times").get<std::vector<int>>();
    for (const auto& row : j.at("states")) {
        std::vector<NodeState> snap;
        snap.reserve(row.size());
        for (const auto& v : row) {
            const int code = v.get<int>();
            if (code < 0 || code > 2) throw ParseError("snapshot series: invalid state code");
            snap.push_back(static_cast<NodeState>(code));
        }
        s.states.push_back(std::move(snap));
    }
    if (s.times.size() != s.states.size())
        throw ParseError("snapshot series: times/states length mismatch");
    s.cascade.sources = j.at("sources").get<std::vector<int>>();
    for (const auto& v : j.at("infection_time"))
        s.cascade.infection_time.push_back(v.is_null() ? kNeverInformed : v.get<int>());
    for (const auto& snap : s.states)
        if (snap.size() != s.cascade.infection_time.size())
            throw ParseError("snapshot series: state row length mismatch");
    const CascadeConfig cfg = cascade_config_from_json(j.at("config"));
    if (cfg_out != nullptr) *cfg_out = cfg;
    return s;
}

inline SnapshotSeries load_snapshot_series(const std::string& path, CascadeConfig* cfg_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open snapshot file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return snapshot_series_from_json(j, cfg_out);
}

}  // namespace sdm

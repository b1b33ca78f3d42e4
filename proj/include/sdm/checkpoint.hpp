#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdm/autodiff.hpp"
#include "sdm/errors.hpp"

namespace sdm {

constexpr const char* kCheckpointFormat = "sdm-ckpt-v1";

/// Serializes parameters as {"format": "sdm-ckpt-v1", name: {shape, data}, ...}.
/// nlohmann emits shortest-round-trip doubles, so reload is bit-exact.
/// "format" and "config" are reserved keys; "config" carries caller metadata.
inline nlohmann::json checkpoint_to_json(const std::vector<const Parameter*>& params,
                                         const nlohmann::json& config = {}) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    if (!config.is_null()) j["config"] = config;
    for (const Parameter* p : params) {
        if (p->name == "format" || p->name == "config" || p->name.empty())
            throw ContractError("checkpoint: reserved or empty parameter name '" + p->name + "'");
        if (j.contains(p->name)) throw ContractError("checkpoint: duplicate parameter name '" + p->name + "'");
        j[p->name] = {{"shape", p->value.shape}, {"data", p->value.data}};
    }
    return j;
}

inline nlohmann::json checkpoint_to_json(const std::vector<Parameter*>& params,
                                         const nlohmann::json& config = {}) {
    return checkpoint_to_json(std::vector<const Parameter*>(params.begin(), params.end()), config);
}

inline void save_checkpoint(const std::string& path, const std::vector<const Parameter*>& params,
                            const nlohmann::json& config = {}) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << checkpoint_to_json(params, config).dump(2) << "\n";
    if (!out) throw IoError("checkpoint write failed: " + path);
}

/// Restores values into the given parameters (matched by name, shapes must
/// agree). Returns the embedded config object, or null when absent.
inline nlohmann::json load_checkpoint_json(const nlohmann::json& j, const std::vector<Parameter*>& params) {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
        throw ParseError("checkpoint: missing or unexpected format tag");
    for (Parameter* p : params) {
        if (!j.contains(p->name)) throw ContractError("checkpoint: parameter '" + p->name + "' not found");
        const auto& entry = j.at(p->name);
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p->value.shape)
            throw ContractError("checkpoint: shape mismatch for '" + p->name + "': file " +
                                shape_to_string(shape) + " vs model " + shape_to_string(p->value.shape));
        const auto data = entry.at("data").get<std::vector<double>>();
        if (data.size() != p->value.data.size())
            throw ContractError("checkpoint: data length mismatch for '" + p->name + "'");
        p->value.data = data;
        p->zero_grad();
    }
    // every non-reserved key must correspond to a model parameter
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "format" || it.key() == "config") continue;
        bool known = false;
        for (const Parameter* p : params)
            if (p->name == it.key()) { known = true; break; }
        if (!known) throw ContractError("checkpoint: unknown parameter '" + it.key() + "' in file");
    }
    return j.contains("config") ? j.at("config") : nlohmann::json();
}

inline nlohmann::json load_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    return load_checkpoint_json(j, params);
}

/// Reads only the embedded config (null when absent), without touching any
/// parameters.  Used to reconstruct a model before loading its weights.
inline nlohmann::json load_checkpoint_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
        throw ParseError("checkpoint: missing or unexpected format tag");
    return j.contains("config") ? j.at("config") : nlohmann::json();
}

}  // namespace sdm

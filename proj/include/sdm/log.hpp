#pragma once

// Minimal stderr logger controlled by the SDM_LOG environment variable
// (debug | info | warn | silent; default info).

#include <cstdlib>
#include <iostream>
#include <string>

namespace sdm {

enum class LogLevel : int { Debug = 0, Info = 1, Warn = 2, Silent = 3 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("SDM_LOG");
        if (env == nullptr) return LogLevel::Info;
        const std::string v(env);
        if (v == "debug") return LogLevel::Debug;
        if (v == "info") return LogLevel::Info;
        if (v == "warn") return LogLevel::Warn;
        if (v == "silent") return LogLevel::Silent;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_at(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) < static_cast<int>(log_level())) return;
    const char* tag = lvl == LogLevel::Debug ? "debug" : (lvl == LogLevel::Info ? "info" : "warn");
    std::cerr << "[" << tag << "] " << msg << "\n";
}

inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_at(LogLevel::Warn, msg); }

}  // namespace sdm

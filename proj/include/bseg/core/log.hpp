#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace bseg::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity is read once from BSEG_LOG_LEVEL (error|warn|info|debug); default warn.
inline Level threshold() {
    static const Level level = [] {
        const char* env = std::getenv("BSEG_LOG_LEVEL");
        if (env == nullptr) return Level::warn;
        const std::string_view v(env);
        if (v == "error") return Level::error;
        if (v == "info") return Level::info;
        if (v == "debug") return Level::debug;
        return Level::warn;
    }();
    return level;
}

inline void emit(Level level, std::string_view tag, std::string_view msg) {
    if (static_cast<int>(level) > static_cast<int>(threshold())) return;
    std::cerr << "[bseg " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { emit(Level::error, "error", msg); }
inline void warn(std::string_view msg) { emit(Level::warn, "warn", msg); }
inline void info(std::string_view msg) { emit(Level::info, "info", msg); }
inline void debug(std::string_view msg) { emit(Level::debug, "debug", msg); }

}  // namespace bseg::log

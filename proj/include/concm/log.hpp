#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace concm::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Threshold from CONCM_LOG (error | info | debug); defaults to error.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("CONCM_LOG");
    if (!env) return Level::Error;
    const std::string_view v(env);
    if (v == "debug") return Level::Debug;
    if (v == "info") return Level::Info;
    return Level::Error;
  }();
  return level;
}

inline void emit(Level lvl, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
  std::cerr << "[concm " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { emit(Level::Error, "error", msg); }
inline void warn(std::string_view msg) { emit(Level::Info, "warn", msg); }
inline void info(std::string_view msg) { emit(Level::Info, "info", msg); }
inline void debug(std::string_view msg) { emit(Level::Debug, "debug", msg); }

}  // namespace concm::log

#pragma once

#include <fmt/core.h>

#include <atomic>
#include <cstdio>
#include <mutex>

namespace unroll::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, quiet = 4 };

inline std::atomic<Level> &threshold()
{
  static std::atomic<Level> level{Level::info};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

template <class... Args> void print(Level level, fmt::format_string<Args...> format, Args &&...args)
{
  if (level < threshold().load()) { return; }
  static std::mutex guard;
  static constexpr const char *tags[] = {"debug", "info", "warn", "error", ""};
  std::string const line = fmt::format(format, std::forward<Args>(args)...);
  std::lock_guard lock(guard);
  fmt::print(stderr, "[{}] {}\n", tags[static_cast<int>(level)], line);
}

template <class... Args> void debug(fmt::format_string<Args...> f, Args &&...a) { print(Level::debug, f, std::forward<Args>(a)...); }
template <class... Args> void info(fmt::format_string<Args...> f, Args &&...a) { print(Level::info, f, std::forward<Args>(a)...); }
template <class... Args> void warn(fmt::format_string<Args...> f, Args &&...a) { print(Level::warn, f, std::forward<Args>(a)...); }
template <class... Args> void error(fmt::format_string<Args...> f, Args &&...a) { print(Level::error, f, std::forward<Args>(a)...); }

} // namespace unroll::log

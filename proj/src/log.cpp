// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#include "uscale/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace uscale {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::info)};
std::mutex g_mutex;

const char* label(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warning: return "warning";
    case LogLevel::error: return "error";
  }
  return "?";
}
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }

void log(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) < g_level) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[uscale " << label(level) << "] " << message << '\n';
}

}  // namespace uscale

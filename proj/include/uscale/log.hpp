// Copyright 2026 The uscale Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace uscale {

enum class LogLevel { debug, info, warning, error };

/// Minimum level written to stderr; defaults to info.
void set_log_level(LogLevel level);
void log(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_warning(std::string_view m) { log(LogLevel::warning, m); }

}  // namespace uscale

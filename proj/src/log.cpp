// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/log.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace hkd::log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("HKD_LOG_LEVEL");
    const std::string v = env ? env : "";
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

void write(Level level, std::string_view message) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static constexpr const char* kTags[] = {"error", "warn", "info", "debug"};
  std::cerr << "[hkd " << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace hkd::log

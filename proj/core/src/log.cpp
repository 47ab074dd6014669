// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace fedacc::log {
namespace {

std::mutex g_mutex;

Sink& CurrentSink() {
  static Sink sink = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

}  // namespace

Sink SetWarningSink(Sink sink) {
  std::lock_guard lock(g_mutex);
  return std::exchange(CurrentSink(), std::move(sink));
}

void Warn(std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (CurrentSink()) CurrentSink()(message);
}

}  // namespace fedacc::log

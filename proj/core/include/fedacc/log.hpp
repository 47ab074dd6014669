// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string_view>

namespace fedacc::log {

using Sink = std::function<void(std::string_view)>;

/// Replaces the warning sink (stderr by default); returns the previous one.
Sink SetWarningSink(Sink sink);
void Warn(std::string_view message);

}  // namespace fedacc::log

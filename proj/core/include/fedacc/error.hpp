// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedacc {

/// Machine-readable failure category. The CLI maps each category to its own
/// exit code and prints the category name on stderr.
enum class ErrorKind {
  kShape,
  kNumeric,
  kConfig,
  kIo,
  kFormat,
  kCrcMismatch,
  kMalformedHeader,
  kOffsetOverlap,
  kBadMagic,
  kTruncated,
  kCountMismatch,
  kSchemaMismatch,
  kState,
};

std::string_view ToString(ErrorKind kind);

/// Process exit code used by the CLI for a given category (always nonzero).
int ExitCode(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fedacc

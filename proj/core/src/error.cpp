// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/error.hpp"

namespace fedacc {

std::string_view ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCrcMismatch: return "crc-mismatch";
    case ErrorKind::kMalformedHeader: return "malformed-header";
    case ErrorKind::kOffsetOverlap: return "offset-overlap";
    case ErrorKind::kBadMagic: return "bad-magic";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kCountMismatch: return "count-mismatch";
    case ErrorKind::kSchemaMismatch: return "schema-mismatch";
    case ErrorKind::kState: return "state";
  }
  return "unknown";
}

int ExitCode(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kIo: return 3;
    case ErrorKind::kFormat:
    case ErrorKind::kCrcMismatch:
    case ErrorKind::kMalformedHeader:
    case ErrorKind::kOffsetOverlap:
    case ErrorKind::kBadMagic:
    case ErrorKind::kTruncated:
    case ErrorKind::kCountMismatch: return 4;
    case ErrorKind::kShape:
    case ErrorKind::kSchemaMismatch: return 5;
    case ErrorKind::kNumeric: return 6;
    case ErrorKind::kState: return 7;
  }
  return 1;
}

}  // namespace fedacc

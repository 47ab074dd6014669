// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint container, all integers little-endian:
//
//   u64 header_len
//   header_len bytes of UTF-8 JSON, keys sorted:
//     {"__metadata__": {"format_version": "1", ...string pairs},
//      "<param path>": {"dtype": "f32le"|"f64le", "shape": [...],
//                       "offset": n, "length": n, "trainable": bool}, ...}
//   blob region: raw tensors, offsets relative to its start
//   u64 CRC-64/XZ of the blob region

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "fedacc/backbone/backbone.hpp"
#include "fedacc/data/dataset.hpp"
#include "fedacc/numerics/parameter.hpp"

namespace fedacc {

inline constexpr std::string_view kCheckpointFormatVersion = "1";

/// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
std::uint64_t Crc64(std::span<const std::uint8_t> bytes, std::uint64_t crc = 0);

struct StoredTensor {
  std::variant<Tensor<float>, Tensor<double>> value;
  bool trainable = true;

  const Shape& shape() const;
  std::string_view dtype() const;
  std::size_t byte_length() const;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, StoredTensor> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string EncodeCheckpoint(const Checkpoint& ckpt);
/// Throws kMalformedHeader, kOffsetOverlap or kCrcMismatch.
Checkpoint DecodeCheckpoint(std::string_view bytes);

/// Atomic: writes a sibling temp file, then renames over `path`.
void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

/// Writes bytes to `path` atomically. Shared by every file the tool emits.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes);
std::string ReadFile(const std::filesystem::path& path);

template <typename T>
void StoreParams(Checkpoint& ckpt, const ConstParamRefs<T>& params);

/// Copies values (and trainable flags when `restore_flags`) into `params`.
/// Every param must be present with the same dtype and shape.
template <typename T>
void RestoreParams(const Checkpoint& ckpt, const ParamRefs<T>& params, bool restore_flags);

template <typename T>
Checkpoint BackboneCheckpoint(const Backbone<T>& backbone);
template <typename T>
Backbone<T> BackboneFromCheckpoint(const Checkpoint& ckpt);
BackboneConfig BackboneConfigFromMetadata(const std::map<std::string, std::string>& metadata);

Checkpoint DatasetCheckpoint(const Dataset& data);
Dataset DatasetFromCheckpoint(const Checkpoint& ckpt);

}  // namespace fedacc

// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/persistence/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

namespace fedacc {
namespace {

using json = nlohmann::json;

constexpr std::uint64_t kCrcPoly = 0xC96C5795D7870F42ULL;  // reflected 0x42F0E1EBA9EA3693

constexpr std::array<std::uint64_t, 256> MakeCrcTable() {
  std::array<std::uint64_t, 256> table{};
  for (std::uint64_t i = 0; i < 256; ++i) {
    std::uint64_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ kCrcPoly : c >> 1;
    table[i] = c;
  }
  return table;
}

constexpr auto kCrcTable = MakeCrcTable();

void PutU64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t GetU64(std::string_view bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[at + i])) << (8 * i);
  }
  return v;
}

template <typename T>
void AppendLe(std::string& out, const Tensor<T>& t) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T x : t.data()) {
    const U u = std::bit_cast<U>(x);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

template <typename T>
Tensor<T> ReadLe(std::string_view blob, const Shape& shape) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Tensor<T> t(shape);
  for (std::size_t k = 0; k < t.size(); ++k) {
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      u |= static_cast<U>(static_cast<std::uint8_t>(blob[k * sizeof(U) + i])) << (8 * i);
    }
    t[k] = std::bit_cast<T>(u);
  }
  return t;
}

[[noreturn]] void Malformed(const std::string& what) {
  throw Error(ErrorKind::kMalformedHeader, "checkpoint header: " + what);
}

template <typename T>
constexpr std::string_view DtypeOf() {
  return sizeof(T) == 4 ? "f32le" : "f64le";
}

std::string MetaGet(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw Error(ErrorKind::kSchemaMismatch, "checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::size_t MetaSize(const std::map<std::string, std::string>& m, const std::string& key) {
  const std::string v = MetaGet(m, key);
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw Error(ErrorKind::kSchemaMismatch, "checkpoint metadata '" + key + "' is not an integer");
  }
}

}  // namespace

std::uint64_t Crc64(std::span<const std::uint8_t> bytes, std::uint64_t crc) {
  crc = ~crc;
  for (std::uint8_t b : bytes) crc = kCrcTable[(crc ^ b) & 0xff] ^ (crc >> 8);
  return ~crc;
}

const Shape& StoredTensor::shape() const {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, value);
}

std::string_view StoredTensor::dtype() const {
  return std::holds_alternative<Tensor<float>>(value) ? "f32le" : "f64le";
}

std::size_t StoredTensor::byte_length() const {
  return std::visit([](const auto& t) { return t.size() * sizeof(t[0]); }, value);
}

std::string EncodeCheckpoint(const Checkpoint& ckpt) {
  json header = json::object();
  json meta = json::object();
  meta["format_version"] = std::string(kCheckpointFormatVersion);
  for (const auto& [k, v] : ckpt.metadata) {
    if (k == "format_version") continue;
    meta[k] = v;
  }
  header["__metadata__"] = std::move(meta);

  std::string blob;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name == "__metadata__") throw Error(ErrorKind::kConfig, "reserved tensor name __metadata__");
    const std::size_t offset = blob.size();
    std::visit([&](const auto& v) { AppendLe(blob, v); }, t.value);
    header[name] = {{"dtype", std::string(t.dtype())},
                    {"shape", t.shape()},
                    {"offset", offset},
                    {"length", blob.size() - offset},
                    {"trainable", t.trainable}};
  }
  const std::string text = header.dump();
  std::string out;
  out.reserve(16 + text.size() + blob.size());
  PutU64(out, text.size());
  out += text;
  out += blob;
  PutU64(out, Crc64({reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()}));
  return out;
}

Checkpoint DecodeCheckpoint(std::string_view bytes) {
  if (bytes.size() < 16) Malformed("file is " + std::to_string(bytes.size()) + " bytes");
  const std::uint64_t header_len = GetU64(bytes, 0);
  if (header_len > bytes.size() - 16) Malformed("length " + std::to_string(header_len) + " exceeds file");
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    Malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!header.is_object()) Malformed("not a JSON object");

  const std::string_view blob = bytes.substr(8 + header_len, bytes.size() - 16 - header_len);
  Checkpoint ckpt;
  if (auto it = header.find("__metadata__"); it != header.end()) {
    if (!it->is_object()) Malformed("__metadata__ is not an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) Malformed("metadata '" + k + "' is not a string");
      ckpt.metadata[k] = v.get<std::string>();
    }
  }
  if (auto it = ckpt.metadata.find("format_version");
      it != ckpt.metadata.end() && it->second != kCheckpointFormatVersion) {
    Malformed("unsupported format_version " + it->second);
  }

  struct Span {
    std::uint64_t offset, length;
    std::string name;
  };
  std::vector<Span> spans;
  std::map<std::string, std::pair<Shape, std::string>> layouts;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    try {
      const std::string dtype = entry.at("dtype").get<std::string>();
      if (dtype != "f32le" && dtype != "f64le") Malformed("'" + name + "': dtype " + dtype);
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      ckpt.tensors[name].trainable = entry.at("trainable").get<bool>();
      const std::size_t elem = dtype == "f32le" ? 4 : 8;
      if (length != NumElements(shape) * elem) Malformed("'" + name + "': length disagrees with shape");
      if (offset > blob.size() || length > blob.size() - offset) Malformed("'" + name + "': outside blob region");
      spans.push_back({offset, length, name});
      layouts[name] = {shape, dtype};
    } catch (const json::exception& e) {
      Malformed("'" + name + "': " + e.what());
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.offset < b.offset || (a.offset == b.offset && a.length < b.length); });
  std::uint64_t cursor = 0;
  for (const Span& s : spans) {
    if (s.offset < cursor) {
      throw Error(ErrorKind::kOffsetOverlap, "checkpoint: tensor '" + s.name + "' overlaps its predecessor");
    }
    if (s.offset > cursor) Malformed("gap before '" + s.name + "'");
    cursor = s.offset + s.length;
  }
  if (cursor != blob.size()) Malformed("blob region has " + std::to_string(blob.size() - cursor) + " unclaimed bytes");

  const std::uint64_t stored = GetU64(bytes, bytes.size() - 8);
  const std::uint64_t actual = Crc64({reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()});
  if (stored != actual) {
    std::ostringstream msg;
    msg << "checkpoint CRC mismatch: stored " << std::hex << stored << ", computed " << actual;
    throw Error(ErrorKind::kCrcMismatch, msg.str());
  }

  for (const Span& s : spans) {
    const auto& [shape, dtype] = layouts[s.name];
    const std::string_view region = blob.substr(s.offset, s.length);
    if (dtype == "f32le") {
      ckpt.tensors[s.name].value = ReadLe<float>(region, shape);
    } else {
      ckpt.tensors[s.name].value = ReadLe<double>(region, shape);
    }
  }
  return ckpt;
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::kIo, "cannot rename into " + path.string());
  }
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void SaveCheckpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  WriteFileAtomic(path, EncodeCheckpoint(ckpt));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) { return DecodeCheckpoint(ReadFile(path)); }

template <typename T>
void StoreParams(Checkpoint& ckpt, const ConstParamRefs<T>& params) {
  for (const Parameter<T>* p : params) {
    if (!ckpt.tensors.emplace(p->name, StoredTensor{p->value, p->trainable}).second) {
      throw Error(ErrorKind::kConfig, "duplicate parameter name '" + p->name + "'");
    }
  }
}

template <typename T>
void RestoreParams(const Checkpoint& ckpt, const ParamRefs<T>& params, bool restore_flags) {
  for (Parameter<T>* p : params) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) {
      throw Error(ErrorKind::kSchemaMismatch, "checkpoint lacks '" + p->name + "'");
    }
    const auto* t = std::get_if<Tensor<T>>(&it->second.value);
    if (t == nullptr) {
      throw Error(ErrorKind::kSchemaMismatch, "'" + p->name + "': stored as " +
                                                  std::string(it->second.dtype()) + ", expected " +
                                                  std::string(DtypeOf<T>()));
    }
    if (t->shape() != p->value.shape()) {
      throw Error(ErrorKind::kSchemaMismatch, "'" + p->name + "': shape " + ShapeToString(t->shape()) +
                                                  " vs " + ShapeToString(p->value.shape()));
    }
  }
  for (Parameter<T>* p : params) {
    const StoredTensor& s = ckpt.tensors.at(p->name);
    p->value = std::get<Tensor<T>>(s.value);
    if (restore_flags) p->trainable = s.trainable;
  }
}

template <typename T>
Checkpoint BackboneCheckpoint(const Backbone<T>& backbone) {
  Checkpoint ckpt;
  const BackboneConfig& c = backbone.config;
  ckpt.metadata = {{"kind", "backbone"},
                   {"backbone.depth", std::to_string(c.depth)},
                   {"backbone.embed_dim", std::to_string(c.embed_dim)},
                   {"backbone.num_heads", std::to_string(c.num_heads)},
                   {"backbone.mlp_ratio", std::to_string(c.mlp_ratio)},
                   {"backbone.patch_size", std::to_string(c.patch_size)},
                   {"backbone.image_side", std::to_string(c.image_side)},
                   {"backbone.channels", std::to_string(c.channels)},
                   {"backbone.pretrain_classes", std::to_string(c.pretrain_classes)}};
  ConstParamRefs<T> refs;
  VisitParams(backbone, [&](const Parameter<T>& p) { refs.push_back(&p); });
  StoreParams(ckpt, refs);
  return ckpt;
}

BackboneConfig BackboneConfigFromMetadata(const std::map<std::string, std::string>& m) {
  BackboneConfig c;
  c.depth = MetaSize(m, "backbone.depth");
  c.embed_dim = MetaSize(m, "backbone.embed_dim");
  c.num_heads = MetaSize(m, "backbone.num_heads");
  c.mlp_ratio = MetaSize(m, "backbone.mlp_ratio");
  c.patch_size = MetaSize(m, "backbone.patch_size");
  c.image_side = MetaSize(m, "backbone.image_side");
  c.channels = MetaSize(m, "backbone.channels");
  c.pretrain_classes = MetaSize(m, "backbone.pretrain_classes");
  c.Validate();
  return c;
}

template <typename T>
Backbone<T> BackboneFromCheckpoint(const Checkpoint& ckpt) {
  const BackboneConfig cfg = BackboneConfigFromMetadata(ckpt.metadata);
  Backbone<T> b = Backbone<T>::Init(cfg, 0);
  ParamRefs<T> refs = MutableParams<T>(b);
  if (refs.size() != ckpt.tensors.size()) {
    throw Error(ErrorKind::kSchemaMismatch, "backbone checkpoint has " + std::to_string(ckpt.tensors.size()) +
                                                " tensors, config implies " + std::to_string(refs.size()));
  }
  RestoreParams(ckpt, refs, true);
  return b;
}

Checkpoint DatasetCheckpoint(const Dataset& data) {
  data.Validate();
  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "dataset"}, {"num_classes", std::to_string(data.num_classes)}};
  Tensor<double> labels({data.labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = data.labels[i];
  ckpt.tensors["inputs"] = {data.inputs, false};
  ckpt.tensors["labels"] = {std::move(labels), false};
  return ckpt;
}

Dataset DatasetFromCheckpoint(const Checkpoint& ckpt) {
  Dataset d;
  d.num_classes = static_cast<int>(MetaSize(ckpt.metadata, "num_classes"));
  const auto* inputs = ckpt.tensors.count("inputs") ? std::get_if<Tensor<float>>(&ckpt.tensors.at("inputs").value) : nullptr;
  const auto* labels = ckpt.tensors.count("labels") ? std::get_if<Tensor<double>>(&ckpt.tensors.at("labels").value) : nullptr;
  if (inputs == nullptr || labels == nullptr) {
    throw Error(ErrorKind::kSchemaMismatch, "dataset checkpoint needs f32 'inputs' and f64 'labels'");
  }
  d.inputs = *inputs;
  for (double y : labels->data()) d.labels.push_back(static_cast<int>(y));
  d.Validate();
  return d;
}

template void StoreParams<float>(Checkpoint&, const ConstParamRefs<float>&);
template void StoreParams<double>(Checkpoint&, const ConstParamRefs<double>&);
template void RestoreParams<float>(const Checkpoint&, const ParamRefs<float>&, bool);
template void RestoreParams<double>(const Checkpoint&, const ParamRefs<double>&, bool);
template Checkpoint BackboneCheckpoint<float>(const Backbone<float>&);
template Checkpoint BackboneCheckpoint<double>(const Backbone<double>&);
template Backbone<float> BackboneFromCheckpoint<float>(const Checkpoint&);
template Backbone<double> BackboneFromCheckpoint<double>(const Checkpoint&);

}  // namespace fedacc

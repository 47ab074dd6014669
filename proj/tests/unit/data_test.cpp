// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "fedacc/data/dataset.hpp"
#include "fedacc/data/partition.hpp"
#include "oracles.hpp"

namespace fedacc {
namespace {

namespace fs = std::filesystem;

std::vector<int> BalancedLabels(int classes, std::size_t per_class) {
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) labels.insert(labels.end(), per_class, c);
  return labels;
}

void WriteBytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> Be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> Cat(std::initializer_list<std::vector<std::uint8_t>> parts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

ErrorKind KindOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kState;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST_CASE("synthetic classes are balanced") {
  SynthSpec spec;
  spec.num_classes = 8;
  spec.n = 4096;
  const auto ds = SynthDataset(spec);
  CHECK(ds.inputs.shape() == Shape{4096, 1, 16, 16});
  for (std::size_t c : ds.ClassCounts()) CHECK(c == 512);
  CHECK(std::all_of(ds.inputs.data().begin(), ds.inputs.data().end(),
                    [](float v) { return v >= 0.0f && v <= 1.0f; }));
}

TEST_CASE("synthetic data is reproducible and noise-free at zero std") {
  SynthSpec spec;
  spec.n = 64;
  spec.cluster_std = 0.0;
  const auto a = SynthDataset(spec), b = SynthDataset(spec);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);
  const std::size_t m = a.example_size();
  std::map<int, std::size_t> first;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it, inserted] = first.emplace(a.labels[i], i);
    if (inserted) continue;
    CHECK(std::equal(a.inputs.ptr() + i * m, a.inputs.ptr() + (i + 1) * m, a.inputs.ptr() + it->second * m));
  }
  spec.noise_seed += 1;
  spec.cluster_std = 0.3;
  CHECK_FALSE(SynthDataset(spec).inputs == a.inputs);
}

TEST_CASE("idx files load with byte scaling") {
  TempDir dir("fedacc_idx_test");
  const auto images = Cat({Be32(0x803), Be32(2), Be32(2), Be32(2), {0, 255, 51, 102, 255, 0, 0, 0}});
  const auto labels = Cat({Be32(0x801), Be32(2), {1, 0}});
  WriteBytes(dir.path / "img", images);
  WriteBytes(dir.path / "lbl", labels);
  const auto ds = LoadIdx(dir.path / "img", dir.path / "lbl");
  CHECK(ds.inputs.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.inputs[0] == 0.0f);
  CHECK(ds.inputs[1] == 1.0f);
  CHECK(ds.inputs[2] == doctest::Approx(0.2));
  CHECK(ds.labels == std::vector<int>{1, 0});
  CHECK(ds.num_classes == 2);

  SUBCASE("count mismatch") {
    WriteBytes(dir.path / "lbl3", Cat({Be32(0x801), Be32(3), {1, 0, 1}}));
    CHECK(KindOf([&] { LoadIdx(dir.path / "img", dir.path / "lbl3"); }) == ErrorKind::kCountMismatch);
  }
  SUBCASE("bad magic") {
    WriteBytes(dir.path / "bad", Cat({Be32(0), Be32(2), Be32(2), Be32(2), {0, 0, 0, 0, 0, 0, 0, 0}}));
    CHECK(KindOf([&] { LoadIdx(dir.path / "bad", dir.path / "lbl"); }) == ErrorKind::kBadMagic);
  }
  SUBCASE("truncated") {
    WriteBytes(dir.path / "short", Cat({Be32(0x803), Be32(2), Be32(2), Be32(2), {0, 0, 0}}));
    CHECK(KindOf([&] { LoadIdx(dir.path / "short", dir.path / "lbl"); }) == ErrorKind::kTruncated);
  }
  SUBCASE("missing file") {
    CHECK(KindOf([&] { LoadIdx(dir.path / "nope", dir.path / "lbl"); }) == ErrorKind::kIo);
  }
}

TEST_CASE("iid split of 100 over 4 clients is 25 each") {
  const auto labels = BalancedLabels(4, 25);
  PartitionSpec spec;
  spec.scheme = PartitionScheme::kIid;
  spec.num_clients = 4;
  for (const auto& s : Partition(labels, 4, spec)) CHECK(s.size() == 25);
}

TEST_CASE("partitions are disjoint, exhaustive and non-empty") {
  const auto labels = BalancedLabels(5, 40);
  for (auto scheme : {PartitionScheme::kLda, PartitionScheme::kIid}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      PartitionSpec spec;
      spec.scheme = scheme;
      spec.alpha = 0.05;
      spec.num_clients = 30;
      spec.seed = seed;
      const auto shards = Partition(labels, 5, spec);
      REQUIRE(shards.size() == 30);
      std::vector<std::size_t> all;
      for (const auto& s : shards) {
        CHECK(s.size() > 0);
        CHECK(std::is_sorted(s.indices.begin(), s.indices.end()));
        all.insert(all.end(), s.indices.begin(), s.indices.end());
      }
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect(labels.size());
      std::iota(expect.begin(), expect.end(), 0);
      CHECK(all == expect);
    }
  }
}

TEST_CASE("more clients than examples is an error") {
  const auto labels = BalancedLabels(2, 2);
  PartitionSpec spec;
  spec.num_clients = 5;
  CHECK_THROWS_AS(Partition(labels, 2, spec), Error);
}

TEST_CASE("dirichlet heterogeneity thresholds") {
  // Oracle first: the thresholds below must hold for the sampler itself.
  const double oracle_flat = testing::DirichletHeterogeneityOracle(1000.0, 10, 100, 5000, 1000, 1);
  const double oracle_skew = testing::DirichletHeterogeneityOracle(0.1, 10, 100, 5000, 1000, 2);
  MESSAGE("oracle mean max-class share: alpha=1000 ", oracle_flat, ", alpha=0.1 ", oracle_skew);
  CHECK(oracle_flat < 0.15);
  CHECK(oracle_skew > 0.5);

  const auto labels = BalancedLabels(10, 5000);
  PartitionSpec spec;
  spec.num_clients = 100;
  spec.alpha = 1000.0;
  const double flat = MeanMaxClassProportion(Partition(labels, 10, spec), labels, 10);
  spec.alpha = 0.1;
  const double skew = MeanMaxClassProportion(Partition(labels, 10, spec), labels, 10);
  CHECK(flat < 0.15);
  CHECK(skew > 0.5);
  CHECK(std::abs(flat - oracle_flat) < 0.02);
  CHECK(std::abs(skew - oracle_skew) < 0.1);
}

TEST_CASE("corruption severity") {
  SynthSpec spec;
  spec.n = 200;
  const auto ds = SynthDataset(spec);
  CHECK(Corrupt(ds, {0, 1}).inputs == ds.inputs);
  CHECK(Corrupt(ds, {3, 1}).inputs == Corrupt(ds, {3, 1}).inputs);
  CHECK(Corrupt(ds, {3, 1}).labels == ds.labels);
  CHECK(CorruptionSpec{5, 0}.noise_std() == doctest::Approx(0.5));
  double prev = 0.0;
  for (int s = 1; s <= 5; ++s) {
    const auto c = Corrupt(ds, {s, 7});
    double sum = 0.0;
    for (std::size_t i = 0; i < 1000; ++i) sum += std::abs(c.inputs[i] - ds.inputs[i]);
    CHECK(sum > prev);
    prev = sum;
  }
}

TEST_CASE("subset and validation") {
  SynthSpec spec;
  spec.n = 16;
  auto ds = SynthDataset(spec);
  const std::size_t idx[] = {3, 5};
  const auto sub = ds.Subset(idx);
  CHECK(sub.size() == 2);
  CHECK(sub.labels[1] == ds.labels[5]);
  ds.labels[0] = 99;
  CHECK_THROWS_AS(ds.Validate(), Error);
}

}  // namespace
}  // namespace fedacc

// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "fedacc/numerics/rng.hpp"

namespace fedacc {

void Dataset::Validate() const {
  if (inputs.rank() != 4) {
    throw Error(ErrorKind::kShape, "dataset inputs must be [n, c, s, s], got " +
                                       ShapeToString(inputs.shape()));
  }
  if (inputs.dim(0) != labels.size()) {
    throw Error(ErrorKind::kCountMismatch,
                "dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                    std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorKind::kFormat, "label " + std::to_string(y) + " outside [0, " +
                                          std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::Subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  const std::size_t stride = example_size();
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  std::vector<float> data(indices.size() * stride);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(inputs.ptr() + indices[i] * stride, stride, data.data() + i * stride);
    out.labels.push_back(labels.at(indices[i]));
  }
  out.inputs = Tensor<float>(shape, std::move(data));
  return out;
}

std::vector<std::size_t> Dataset::ClassCounts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

template <typename T>
Tensor<T> GatherImages(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t stride = ds.example_size();
  Tensor<T> out({indices.size(), ds.channels(), ds.side(), ds.side()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const float* src = ds.inputs.ptr() + indices[i] * stride;
    std::transform(src, src + stride, out.ptr() + i * stride,
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

std::vector<int> GatherLabels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.labels.at(i));
  return out;
}

template Tensor<float> GatherImages<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> GatherImages<double>(const Dataset&, std::span<const std::size_t>);

Dataset SynthDataset(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw Error(ErrorKind::kConfig, "synth: need at least 2 classes");
  if (spec.n < static_cast<std::size_t>(spec.num_classes)) {
    throw Error(ErrorKind::kConfig, "synth: n must be >= number of classes");
  }
  if (spec.side == 0 || spec.channels == 0) {
    throw Error(ErrorKind::kConfig, "synth: side and channels must be positive");
  }
  const std::size_t pixels = spec.channels * spec.side * spec.side;
  const auto classes = static_cast<std::size_t>(spec.num_classes);

  std::mt19937_64 template_rng = MakeRng(spec.label_map_seed, {0x7e3});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> templates(classes * pixels);
  for (double& v : templates) v = unit(template_rng);

  std::mt19937_64 noise_rng = MakeRng(spec.noise_seed, {0x401});
  std::vector<int> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), noise_rng);

  std::normal_distribution<double> noise(0.0, spec.cluster_std);
  std::vector<float> data(spec.n * pixels);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double* tpl = templates.data() + static_cast<std::size_t>(labels[i]) * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = spec.cluster_std > 0 ? tpl[p] + noise(noise_rng) : tpl[p];
      data[i * pixels + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  Dataset ds;
  ds.inputs = Tensor<float>({spec.n, spec.channels, spec.side, spec.side}, std::move(data));
  ds.labels = std::move(labels);
  ds.num_classes = spec.num_classes;
  return ds;
}

namespace {

std::vector<unsigned char> ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t ReadBigEndian32(const std::vector<unsigned char>& buf, std::size_t offset,
                              const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) {
    throw Error(ErrorKind::kTruncated, "idx: truncated header in " + path.string());
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset LoadIdx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = ReadAll(images);
  const auto lab = ReadAll(labels);
  const std::uint32_t img_magic = ReadBigEndian32(img, 0, images);
  if (img_magic != kIdxImagesMagic) {
    throw Error(ErrorKind::kBadMagic, "idx: bad magic in image file " + images.string());
  }
  const std::uint32_t lab_magic = ReadBigEndian32(lab, 0, labels);
  if (lab_magic != kIdxLabelsMagic) {
    throw Error(ErrorKind::kBadMagic, "idx: bad magic in label file " + labels.string());
  }
  const std::size_t n = ReadBigEndian32(img, 4, images);
  const std::size_t rows = ReadBigEndian32(img, 8, images);
  const std::size_t cols = ReadBigEndian32(img, 12, images);
  const std::size_t n_labels = ReadBigEndian32(lab, 4, labels);
  if (rows != cols || rows == 0) {
    throw Error(ErrorKind::kFormat, "idx: only square non-empty images are supported");
  }
  if (img.size() < 16 + n * rows * cols) {
    throw Error(ErrorKind::kTruncated, "idx: truncated image data in " + images.string());
  }
  if (lab.size() < 8 + n_labels) {
    throw Error(ErrorKind::kTruncated, "idx: truncated label data in " + labels.string());
  }
  if (n != n_labels) {
    throw Error(ErrorKind::kCountMismatch, "idx: " + std::to_string(n) + " images but " +
                                               std::to_string(n_labels) + " labels");
  }
  std::vector<float> data(n * rows * cols);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  Dataset ds;
  ds.inputs = Tensor<float>({n, 1, rows, cols}, std::move(data));
  ds.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

Dataset Corrupt(const Dataset& ds, const CorruptionSpec& spec) {
  if (spec.severity < 0 || spec.severity > 5) {
    throw Error(ErrorKind::kConfig, "corruption severity must be in [0, 5]");
  }
  Dataset out = ds;
  if (spec.severity == 0) return out;
  std::mt19937_64 rng = MakeRng(spec.seed, {0xc0ff});
  std::normal_distribution<double> noise(0.0, spec.noise_std());
  for (float& v : out.inputs.data()) {
    v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
  }
  return out;
}

}  // namespace fedacc

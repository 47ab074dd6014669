// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <random>
#include <vector>

#include "fedacc/adapters/model.hpp"
#include "grad_cases.hpp"

namespace fedacc::testing {

template <typename T = double>
std::shared_ptr<const Backbone<T>> FrozenBackbone(const BackboneConfig& cfg, std::uint64_t seed) {
  auto b = std::make_shared<Backbone<T>>(Backbone<T>::Init(cfg, seed));
  b->Freeze();
  return b;
}

template <typename T = double>
Tensor<T> RandomImages(const BackboneConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  Tensor<T> images({batch, cfg.channels, cfg.image_side, cfg.image_side});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = static_cast<T>(unit(rng));
  return images;
}

template <typename T>
void Randomize(Parameter<T>& p, std::mt19937_64& rng, double std = 0.5) {
  std::normal_distribution<double> n(0.0, std);
  for (auto& v : p.value.data()) v = static_cast<T>(n(rng));
}

template <typename T, typename S>
void RandomizeAll(S& structure, std::mt19937_64& rng, double std = 0.5) {
  for (Parameter<T>* p : MutableParams<T>(structure)) Randomize(*p, rng, std);
}

/// Logits at one exit, computed on an inference tape.
template <typename T>
Tensor<T> ExitLogitsAt(const Model<T>& model, const Tensor<T>& images, std::size_t exit) {
  Tape<T> tape(false);
  const std::size_t exits[] = {exit};
  return ForwardExits(tape, model, images, std::span<const std::size_t>(exits)).logits.front().value();
}

}  // namespace fedacc::testing

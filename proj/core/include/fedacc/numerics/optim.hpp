// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>

#include "fedacc/numerics/parameter.hpp"

namespace fedacc {

struct SgdConfig {
  double base_lr = 5e-3;
  double min_lr = 0.0;
  double momentum = 0.0;
  std::int64_t total_steps = 1;

  /// Throws ErrorKind::kConfig unless 0 <= min_lr <= base_lr, total_steps >= 1
  /// and 0 <= momentum < 1.
  void Validate() const;
};

/// Cosine-annealed learning rate:
///   min_lr + 0.5 * (base_lr - min_lr) * (1 + cos(pi * step / total_steps)).
/// Steps past total_steps are clamped to min_lr with a warning.
double LrAt(std::int64_t step, const SgdConfig& cfg);

/// Plain SGD on every trainable parameter, then zeroes all gradients.
/// If any trainable gradient is non-finite the whole step is aborted with
/// ErrorKind::kNumeric naming the parameter, and no value changes.
template <typename T>
void SgdStep(const ParamRefs<T>& params, double lr);

/// SGD with optional heavy-ball momentum; velocity buffers are keyed by
/// parameter name.
template <typename T>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void Step(const ParamRefs<T>& params, double lr);

 private:
  double momentum_;
  std::map<std::string, Tensor<T>> velocity_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace fedacc

// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/numerics/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fedacc/log.hpp"

namespace fedacc {

void SgdConfig::Validate() const {
  if (!(min_lr >= 0.0 && min_lr <= base_lr)) {
    throw Error(ErrorKind::kConfig, "sgd: require 0 <= min_lr <= base_lr");
  }
  if (total_steps < 1) throw Error(ErrorKind::kConfig, "sgd: total_steps must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::kConfig, "sgd: momentum must be in [0, 1)");
  }
}

double LrAt(std::int64_t step, const SgdConfig& cfg) {
  if (step < 0) throw Error(ErrorKind::kConfig, "lr_at: negative step");
  if (step > cfg.total_steps) {
    log::Warn("lr_at: step " + std::to_string(step) + " exceeds total_steps " +
              std::to_string(cfg.total_steps) + "; clamping to min_lr");
    return cfg.min_lr;
  }
  if (step == cfg.total_steps) return cfg.min_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.min_lr +
         0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

template <typename T>
void RequireFiniteGrads(const ParamRefs<T>& params) {
  for (const Parameter<T>* p : params) {
    if (p->trainable && !p->grad.AllFinite()) {
      throw Error(ErrorKind::kNumeric, "sgd: non-finite gradient in " + p->name);
    }
  }
}

}  // namespace

template <typename T>
void SgdStep(const ParamRefs<T>& params, double lr) {
  RequireFiniteGrads(params);
  const T step = static_cast<T>(lr);
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= step * p->grad[i];
    p->ZeroGrad();
  }
}

template <typename T>
void Sgd<T>::Step(const ParamRefs<T>& params, double lr) {
  if (momentum_ == 0.0) {
    SgdStep(params, lr);
    return;
  }
  RequireFiniteGrads(params);
  const T step = static_cast<T>(lr);
  const T mu = static_cast<T>(momentum_);
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    auto [it, inserted] = velocity_.try_emplace(p->name, p->value.shape());
    Tensor<T>& v = it->second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      v[i] = mu * v[i] + p->grad[i];
      p->value[i] -= step * v[i];
    }
    p->ZeroGrad();
  }
}

template void SgdStep<float>(const ParamRefs<float>&, double);
template void SgdStep<double>(const ParamRefs<double>&, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace fedacc

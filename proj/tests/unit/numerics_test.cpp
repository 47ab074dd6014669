// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fedacc/log.hpp"
#include "fedacc/numerics/ops.hpp"
#include "fedacc/numerics/optim.hpp"
#include "fedacc/numerics/rng.hpp"
#include "grad_cases.hpp"

namespace fedacc {
namespace {

template <typename T>
Tensor<T> Vec(std::vector<T> v) {
  const std::size_t n = v.size();
  return Tensor<T>({n}, std::move(v));
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape<double> tape(false);
  auto y = ops::Softmax(tape.Constant(Vec<double>({0, 0})));
  CHECK(y.value()[0] == doctest::Approx(0.5));
  CHECK(y.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("layernorm of a constant row is zero") {
  Tape<double> tape(false);
  auto x = tape.Constant(Tensor<double>({1, 6}, 3.25));
  auto y = ops::LayerNorm(x, tape.Constant(Tensor<double>({6}, 1.0)), tape.Constant(Tensor<double>({6}, 0.0)));
  for (double v : y.value().data()) CHECK(v == 0.0);
}

TEST_CASE("cross entropy of uniform logits is log C") {
  Tape<double> tape(false);
  const std::vector<int> label{2};
  auto loss = ops::CrossEntropy(tape.Constant(Tensor<double>({1, 4})), std::span<const int>(label));
  CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("backward of x*x at 3 is 6") {
  Parameter<double> x("x", Vec<double>({3.0}));
  Tape<double> tape;
  auto v = tape.Param(x);
  tape.Backward(ops::Sum(ops::Mul(v, v)));
  CHECK(x.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("gradient of sum(softmax(x)) vanishes") {
  Parameter<double> x("x", Vec<double>({0.3, -1.2, 2.0, 0.7}));
  Tape<double> tape;
  tape.Backward(ops::Sum(ops::Softmax(tape.Param(x))));
  for (double g : x.grad.data()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("backward rejects non-scalar loss and second sweep") {
  Parameter<double> x("x", Vec<double>({1.0, 2.0}));
  Tape<double> tape;
  auto v = tape.Param(x);
  CHECK_THROWS_AS(tape.Backward(v), Error);
  auto s = ops::Sum(v);
  tape.Backward(s);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.Backward(s), Error);
}

TEST_CASE("frozen parameters receive no gradient") {
  Parameter<double> w("w", Vec<double>({1.0, 2.0}), false);
  Parameter<double> b("b", Vec<double>({0.5, 0.5}));
  Tape<double> tape;
  tape.Backward(ops::Sum(ops::Mul(tape.Param(w), tape.Param(b))));
  CHECK(w.grad == Tensor<double>({2}));
  CHECK(b.grad[0] == 1.0);
  CHECK(b.grad[1] == 2.0);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape<double> tape(false);
  try {
    ops::Add(tape.Constant(Tensor<double>({2, 3})), tape.Constant(Tensor<double>({3, 2})));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 2]") != std::string::npos);
  }
}

TEST_CASE("non-finite results raise a numeric error") {
  Tape<float> tape(false);
  auto big = tape.Constant(Tensor<float>({2}, 3e38f));
  try {
    ops::Add(big, big);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
  }
}

TEST_CASE("primitive gradients match finite differences") {
  for (const auto& c : testing::PrimitiveCases()) {
    CAPTURE(c.name);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto rng = MakeRng(seed, {1});
      const auto r = c.run(rng);
      CHECK(r.rel_error < 1e-4);
      CHECK(r.analytic_norm > 1e-6);
    }
  }
}

TEST_CASE("composed exit loss gradients match finite differences") {
  for (MethodKind m : {MethodKind::kAccumulator, MethodKind::kLwMlp, MethodKind::kFullFineTune}) {
    for (bool pa : {false, true}) {
      CAPTURE(ToString(m));
      CAPTURE(pa);
      auto rng = MakeRng(11, {static_cast<std::uint64_t>(m), pa});
      const auto r = testing::CheckComposedLoss(m, pa, rng);
      CHECK(r.rel_error < 1e-4);
      CHECK(r.analytic_norm > 1e-6);
    }
  }
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  SgdConfig cfg;
  cfg.base_lr = 5e-3;
  cfg.total_steps = 100;
  CHECK(LrAt(0, cfg) == 5e-3);
  CHECK(LrAt(100, cfg) == 0.0);
  CHECK(LrAt(50, cfg) == doctest::Approx(2.5e-3).epsilon(1e-12));
  double prev = LrAt(0, cfg);
  for (int s = 1; s <= 100; ++s) {
    CHECK(LrAt(s, cfg) <= prev);
    prev = LrAt(s, cfg);
  }
}

TEST_CASE("schedule clamps past the horizon with a warning") {
  std::vector<std::string> warnings;
  auto previous = log::SetWarningSink([&](std::string_view m) { warnings.emplace_back(m); });
  SgdConfig cfg;
  cfg.total_steps = 10;
  cfg.min_lr = 1e-4;
  CHECK(LrAt(11, cfg) == 1e-4);
  log::SetWarningSink(previous);
  CHECK(warnings.size() == 1);
}

TEST_CASE("sgd step examples") {
  Parameter<float> p("p", Vec<float>({1.0f}));
  p.grad[0] = 2.0f;
  SgdStep<float>({&p}, 0.5);
  CHECK(p.value[0] == 0.0f);
  CHECK(p.grad[0] == 0.0f);

  Parameter<float> frozen("f", Vec<float>({1.0f}), false);
  frozen.grad[0] = 7.0f;
  SgdStep<float>({&frozen}, 0.5);
  CHECK(frozen.value[0] == 1.0f);

  Parameter<double> a("a", Vec<double>({1.0}));
  Parameter<double> b("b", Vec<double>({1.0}));
  a.grad[0] = 0.25;
  SgdStep<double>({&a}, 0.5);
  a.grad[0] = 0.25;
  SgdStep<double>({&a}, 0.5);
  b.grad[0] = 0.5;
  SgdStep<double>({&b}, 0.5);
  CHECK(a.value[0] == b.value[0]);
}

TEST_CASE("sgd aborts on NaN gradient naming the parameter") {
  Parameter<float> ok("layer.ok", Vec<float>({1.0f}));
  Parameter<float> bad("layer.bad", Vec<float>({1.0f}));
  ok.grad[0] = 1.0f;
  bad.grad[0] = std::nanf("");
  try {
    SgdStep<float>({&ok, &bad}, 0.1);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
    CHECK(std::string(e.what()).find("layer.bad") != std::string::npos);
  }
  CHECK(ok.value[0] == 1.0f);
}

TEST_CASE("derived seeds are stable and key-sensitive") {
  CHECK(DeriveSeed(1, {2, 3}) == DeriveSeed(1, {2, 3}));
  CHECK(DeriveSeed(1, {2, 3}) != DeriveSeed(1, {3, 2}));
  CHECK(DeriveSeed(1, {2}) != DeriveSeed(2, {2}));
}

}  // namespace
}  // namespace fedacc

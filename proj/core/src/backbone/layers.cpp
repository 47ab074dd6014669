// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/backbone/layers.hpp"

#include <cmath>

namespace fedacc {

template <typename T>
Tensor<T> InitTensor(const Shape& shape, Init init, double std, std::mt19937_64& rng) {
  Tensor<T> out(shape);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      out.Fill(T{1});
      break;
    case Init::kXavierUniform: {
      if (shape.size() != 2) throw Error(ErrorKind::kShape, "xavier init needs a matrix");
      const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : out.data()) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::kNormal: {
      std::normal_distribution<double> dist(0.0, std);
      for (T& v : out.data()) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::kTruncNormal: {
      std::normal_distribution<double> dist(0.0, std);
      for (T& v : out.data()) {
        double x = dist(rng);
        while (std::abs(x) > 2.0 * std) x = dist(rng);
        v = static_cast<T>(x);
      }
      break;
    }
  }
  return out;
}

template <typename T>
LinearParams<T> LinearParams<T>::Make(const std::string& name, std::size_t in,
                                      std::size_t out, Init init, double std,
                                      std::mt19937_64& rng) {
  return LinearParams{Parameter<T>(name + ".weight", InitTensor<T>({in, out}, init, std, rng)),
                      Parameter<T>(name + ".bias", Tensor<T>({out}))};
}

template <typename T>
Var<T> LinearParams<T>::Forward(Tape<T>& tape, Var<T> x) const {
  return ops::Linear(x, tape.Param(weight), std::optional<Var<T>>(tape.Param(bias)));
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::Make(const std::string& name, std::size_t dim) {
  return LayerNormParams{Parameter<T>(name + ".gamma", Tensor<T>({dim}, T{1})),
                         Parameter<T>(name + ".beta", Tensor<T>({dim}))};
}

template <typename T>
Var<T> LayerNormParams<T>::Forward(Tape<T>& tape, Var<T> x) const {
  return ops::LayerNorm(x, tape.Param(gamma), tape.Param(beta));
}

template <typename T>
BlockParams<T> BlockParams<T>::Make(const std::string& name, std::size_t dim,
                                    std::size_t num_heads, std::size_t mlp_ratio,
                                    std::mt19937_64& rng) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw Error(ErrorKind::kConfig, "block: embed dim must be divisible by num_heads");
  }
  const std::size_t hidden = dim * mlp_ratio;
  BlockParams p;
  p.norm1 = LayerNormParams<T>::Make(name + ".norm1", dim);
  p.qkv = LinearParams<T>::Make(name + ".attn.qkv", dim, 3 * dim, Init::kXavierUniform, 0, rng);
  p.proj = LinearParams<T>::Make(name + ".attn.proj", dim, dim, Init::kXavierUniform, 0, rng);
  p.norm2 = LayerNormParams<T>::Make(name + ".norm2", dim);
  p.fc1 = LinearParams<T>::Make(name + ".mlp.fc1", dim, hidden, Init::kXavierUniform, 0, rng);
  p.fc2 = LinearParams<T>::Make(name + ".mlp.fc2", hidden, dim, Init::kXavierUniform, 0, rng);
  p.num_heads = num_heads;
  return p;
}

template <typename T>
Var<T> BlockParams<T>::Forward(Tape<T>& tape, Var<T> z, const MlpSideBranch<T>& side) const {
  Var<T> attn = ops::Attention(qkv.Forward(tape, norm1.Forward(tape, z)), num_heads);
  z = ops::Add(proj.Forward(tape, attn), z);
  Var<T> normed = norm2.Forward(tape, z);
  Var<T> mlp = fc2.Forward(tape, ops::Gelu(fc1.Forward(tape, normed)));
  if (side) mlp = ops::Add(mlp, side(normed));
  return ops::Add(mlp, z);
}

template <typename T>
std::size_t BlockParams<T>::CountParams(std::size_t dim, std::size_t mlp_ratio) {
  const std::size_t hidden = dim * mlp_ratio;
  return 2 * dim                        // norm1
         + dim * 3 * dim + 3 * dim      // qkv
         + dim * dim + dim              // proj
         + 2 * dim                      // norm2
         + dim * hidden + hidden        // fc1
         + hidden * dim + dim;          // fc2
}

template Tensor<float> InitTensor<float>(const Shape&, Init, double, std::mt19937_64&);
template Tensor<double> InitTensor<double>(const Shape&, Init, double, std::mt19937_64&);
template struct LinearParams<float>;
template struct LinearParams<double>;
template struct LayerNormParams<float>;
template struct LayerNormParams<double>;
template struct BlockParams<float>;
template struct BlockParams<double>;

}  // namespace fedacc

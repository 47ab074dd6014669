// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace fedacc::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using SMapR = Eigen::Map<MatR<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using CSMapR = Eigen::Map<const MatR<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename T>
CMapR<T> AsMatrix(const Tensor<T>& t) {
  return CMapR<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapR<T> AsMatrix(Tensor<T>& t) {
  return MapR<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void ShapeError(std::string_view op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::kShape, std::string(op) + ": shape mismatch " +
                                     ShapeToString(a) + " vs " + ShapeToString(b));
}

void RequireRank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw Error(ErrorKind::kShape, std::string(op) + ": expected rank " +
                                       std::to_string(rank) + ", got " +
                                       ShapeToString(s));
  }
}

/// Gradient buffer of an input, or nullptr when it carries no gradient.
template <typename T>
Tensor<T>* GradIfNeeded(Tape<T>& t, Var<T> v) {
  return t.requires_grad(v.id) ? &t.grad(v.id) : nullptr;
}

template <typename T>
T GeluValue(T x) {
  return T{0.5} * x * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T GeluDerivative(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T{-0.5} * x * x) *
                static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
Var<T> Add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) ShapeError("add", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->Record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    for (Var<T> in : {a, b}) {
      if (Tensor<T>* gi = GradIfNeeded(t, in)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> Mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) ShapeError("mul", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->Record("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& av = t.value(a.id);
    const Tensor<T>& bv = t.value(b.id);
    if (Tensor<T>* ga = GradIfNeeded(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor<T>* gb = GradIfNeeded(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> Scale(Var<T> a, T factor) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->Record("scale", std::move(out), {a}, [a, factor](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> AddBroadcast(Var<T> x, Var<T> y) {
  const auto& xv = x.value();
  const auto& yv = y.value();
  const Shape& xs = xv.shape();
  const Shape& ys = yv.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    ShapeError("add_broadcast", xs, ys);
  }
  const std::size_t inner = yv.size();
  Tensor<T> out(xs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + yv[i % inner];
  return x.tape->Record("add_broadcast", std::move(out), {x, y},
                        [x, y, inner](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    if (Tensor<T>* gx = GradIfNeeded(t, x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor<T>* gy = GradIfNeeded(t, y)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gy)[i % inner] += g[i];
    }
  });
}

template <typename T>
Var<T> MatMul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  RequireRank("matmul", av.shape(), 2);
  RequireRank("matmul", bv.shape(), 2);
  if (av.dim(1) != bv.dim(0)) ShapeError("matmul", av.shape(), bv.shape());
  Tensor<T> out({av.dim(0), bv.dim(1)});
  AsMatrix(out).noalias() = AsMatrix(av) * AsMatrix(bv);
  return a.tape->Record("matmul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::uint32_t o) {
    auto g = AsMatrix(std::as_const(t.grad(o)));
    if (Tensor<T>* ga = GradIfNeeded(t, a)) {
      AsMatrix(*ga).noalias() += g * AsMatrix(t.value(b.id)).transpose();
    }
    if (Tensor<T>* gb = GradIfNeeded(t, b)) {
      AsMatrix(*gb).noalias() += AsMatrix(t.value(a.id)).transpose() * g;
    }
  });
}

template <typename T>
Var<T> Linear(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  RequireRank("linear weight", wv.shape(), 2);
  if (xv.rank() < 1 || xv.cols() != wv.dim(0)) ShapeError("linear", xv.shape(), wv.shape());
  const std::size_t out_dim = wv.dim(1);
  if (b && (b->value().rank() != 1 || b->value().dim(0) != out_dim)) {
    ShapeError("linear bias", wv.shape(), b->value().shape());
  }
  Shape out_shape = xv.shape();
  out_shape.back() = out_dim;
  Tensor<T> out(out_shape);
  auto y = AsMatrix(out);
  y.noalias() = AsMatrix(xv) * AsMatrix(wv);
  if (b) {
    const auto& bv = b->value();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        bv.ptr(), static_cast<Eigen::Index>(out_dim));
  }
  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->Record("linear", std::move(out), inputs, [x, w, b](Tape<T>& t, std::uint32_t o) {
    auto g = AsMatrix(std::as_const(t.grad(o)));
    if (Tensor<T>* gx = GradIfNeeded(t, x)) {
      AsMatrix(*gx).noalias() += g * AsMatrix(t.value(w.id)).transpose();
    }
    if (Tensor<T>* gw = GradIfNeeded(t, w)) {
      AsMatrix(*gw).noalias() += AsMatrix(t.value(x.id)).transpose() * g;
    }
    if (b) {
      if (Tensor<T>* gb = GradIfNeeded(t, *b)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            gb->ptr(), static_cast<Eigen::Index>(gb->size())) += g.colwise().sum();
      }
    }
  });
}

template <typename T>
Var<T> Gelu(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = GeluValue(xv[i]);
  return x.tape->Record("gelu", std::move(out), {x}, [x](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& xv = t.value(x.id);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * GeluDerivative(xv[i]);
  });
}

template <typename T>
Var<T> Softmax(Var<T> x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * cols;
    T* y = out.ptr() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return x.tape->Record("softmax", std::move(out), {x}, [x, rows, cols](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& y = t.value(o);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      T dot{0};
      for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
      for (std::size_t c = 0; c < cols; ++c) gx[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
}

template <typename T>
Var<T> LayerNorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  const std::size_t cols = xv.cols();
  const std::size_t rows = xv.rows();
  if (gv.shape() != Shape{cols}) ShapeError("layer_norm gamma", xv.shape(), gv.shape());
  if (bv.shape() != Shape{cols}) ShapeError("layer_norm beta", xv.shape(), bv.shape());
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * cols;
    T mean{0};
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<T>(cols);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (in[c] - mean) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape->Record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](
          Tape<T>& t, std::uint32_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& gv = t.value(gamma.id);
        if (Tensor<T>* gg = GradIfNeeded(t, gamma)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % cols] += g[i] * xhat[i];
        }
        if (Tensor<T>* gb = GradIfNeeded(t, beta)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % cols] += g[i];
        }
        if (Tensor<T>* gx = GradIfNeeded(t, x)) {
          const T inv_n = T{1} / static_cast<T>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * cols;
            T mean_d{0};
            T mean_dx{0};
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = g[base + c] * gv[c];
              mean_d += d;
              mean_dx += d * xhat[base + c];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = g[base + c] * gv[c];
              (*gx)[base + c] += rstd[r] * (d - mean_d - xhat[base + c] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
Var<T> Attention(Var<T> qkv, std::size_t num_heads) {
  const auto& in = qkv.value();
  RequireRank("attention", in.shape(), 3);
  const std::size_t batch = in.dim(0);
  const std::size_t seq = in.dim(1);
  const std::size_t width = in.dim(2);
  if (num_heads == 0 || width % (3 * num_heads) != 0) {
    throw Error(ErrorKind::kShape, "attention: last axis " + std::to_string(width) +
                                       " not divisible into q|k|v for " +
                                       std::to_string(num_heads) + " heads");
  }
  const std::size_t d = width / 3;
  const std::size_t dh = d / num_heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const auto n = static_cast<Eigen::Index>(seq);
  const auto hd = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(width));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));

  Tensor<T> out({batch, seq, d});
  std::vector<T> probs(batch * num_heads * seq * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = in.ptr() + b * seq * width;
    for (std::size_t h = 0; h < num_heads; ++h) {
      CSMapR<T> q(base + h * dh, n, hd, in_stride);
      CSMapR<T> k(base + d + h * dh, n, hd, in_stride);
      CSMapR<T> v(base + 2 * d + h * dh, n, hd, in_stride);
      MapR<T> p(probs.data() + (b * num_heads + h) * seq * seq, n, n);
      p.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        auto row = p.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      SMapR<T> o(out.ptr() + b * seq * d + h * dh, n, hd, out_stride);
      o.noalias() = p * v;
    }
  }
  return qkv.tape->Record(
      "attention", std::move(out), {qkv},
      [qkv, batch, seq, width, d, dh, num_heads, scale, probs = std::move(probs)](
          Tape<T>& t, std::uint32_t o) {
        const Tensor<T>& g = t.grad(o);
        const Tensor<T>& in = t.value(qkv.id);
        Tensor<T>& gin = t.grad(qkv.id);
        const auto n = static_cast<Eigen::Index>(seq);
        const auto hd = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(width));
        const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
        MatR<T> dp(n, n);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = in.ptr() + b * seq * width;
          T* gbase = gin.ptr() + b * seq * width;
          for (std::size_t h = 0; h < num_heads; ++h) {
            CSMapR<T> q(base + h * dh, n, hd, in_stride);
            CSMapR<T> k(base + d + h * dh, n, hd, in_stride);
            CSMapR<T> v(base + 2 * d + h * dh, n, hd, in_stride);
            SMapR<T> gq(gbase + h * dh, n, hd, in_stride);
            SMapR<T> gk(gbase + d + h * dh, n, hd, in_stride);
            SMapR<T> gv(gbase + 2 * d + h * dh, n, hd, in_stride);
            CMapR<T> p(probs.data() + (b * num_heads + h) * seq * seq, n, n);
            CSMapR<T> go(g.ptr() + b * seq * d + h * dh, n, hd, out_stride);
            gv.noalias() += p.transpose() * go;
            dp.noalias() = go * v.transpose();
            for (Eigen::Index r = 0; r < n; ++r) {
              const T dot = dp.row(r).dot(p.row(r));
              dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
            }
            gq.noalias() += (dp * k) * scale;
            gk.noalias() += (dp.transpose() * q) * scale;
          }
        }
      });
}

template <typename T>
Var<T> Sum(Var<T> x) {
  const auto& xv = x.value();
  T total{0};
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i];
  return x.tape->Record("sum", Tensor<T>(Shape{}, total), {x}, [x](Tape<T>& t, std::uint32_t o) {
    const T g = t.grad(o)[0];
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> Mean(Var<T> x) {
  const auto& xv = x.value();
  T total{0};
  for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i];
  const T inv = T{1} / static_cast<T>(xv.size());
  return x.tape->Record("mean", Tensor<T>(Shape{}, total * inv), {x},
                        [x, inv](Tape<T>& t, std::uint32_t o) {
    const T g = t.grad(o)[0] * inv;
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> CrossEntropy(Var<T> logits, std::span<const int> labels) {
  const auto& lv = logits.value();
  RequireRank("cross_entropy", lv.shape(), 2);
  const std::size_t rows = lv.dim(0);
  const std::size_t classes = lv.dim(1);
  if (labels.size() != rows) {
    ShapeError("cross_entropy labels", lv.shape(), Shape{labels.size()});
  }
  std::vector<T> probs(lv.size());
  std::vector<int> label_copy(labels.begin(), labels.end());
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error(ErrorKind::kShape, "cross_entropy: label " + std::to_string(y) +
                                         " outside [0, " + std::to_string(classes) + ")");
    }
    const T* in = lv.ptr() + r * classes;
    T* p = probs.data() + r * classes;
    const T mx = *std::max_element(in, in + classes);
    T z{0};
    for (std::size_t c = 0; c < classes; ++c) z += (p[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) p[c] /= z;
    total += std::log(z) + mx - in[y];
  }
  const T inv = T{1} / static_cast<T>(rows);
  return logits.tape->Record(
      "cross_entropy", Tensor<T>(Shape{}, total * inv), {logits},
      [logits, classes, inv, probs = std::move(probs), label_copy = std::move(label_copy)](
          Tape<T>& t, std::uint32_t o) {
        const T g = t.grad(o)[0] * inv;
        Tensor<T>& gl = t.grad(logits.id);
        for (std::size_t i = 0; i < probs.size(); ++i) gl[i] += g * probs[i];
        for (std::size_t r = 0; r < label_copy.size(); ++r) {
          gl[r * classes + static_cast<std::size_t>(label_copy[r])] -= g;
        }
      });
}

template <typename T>
Var<T> SelectToken(Var<T> x, std::size_t token) {
  const auto& xv = x.value();
  RequireRank("select_token", xv.shape(), 3);
  const std::size_t batch = xv.dim(0), seq = xv.dim(1), d = xv.dim(2);
  if (token >= seq) {
    throw Error(ErrorKind::kShape, "select_token: index " + std::to_string(token) +
                                       " out of range for " + ShapeToString(xv.shape()));
  }
  Tensor<T> out({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xv.ptr() + (b * seq + token) * d, d, out.ptr() + b * d);
  }
  return x.tape->Record("select_token", std::move(out), {x},
                        [x, batch, seq, d, token](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t b = 0; b < batch; ++b) {
      T* dst = gx.ptr() + (b * seq + token) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g[b * d + c];
    }
  });
}

template <typename T>
Var<T> ReplaceToken(Var<T> x, std::size_t token, Var<T> v) {
  const auto& xv = x.value();
  const auto& vv = v.value();
  RequireRank("replace_token", xv.shape(), 3);
  const std::size_t batch = xv.dim(0), seq = xv.dim(1), d = xv.dim(2);
  if (vv.shape() != Shape{batch, d}) ShapeError("replace_token", xv.shape(), vv.shape());
  if (token >= seq) {
    throw Error(ErrorKind::kShape, "replace_token: index " + std::to_string(token) +
                                       " out of range for " + ShapeToString(xv.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(vv.ptr() + b * d, d, out.ptr() + (b * seq + token) * d);
  }
  return x.tape->Record("replace_token", std::move(out), {x, v},
                        [x, v, batch, seq, d, token](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    if (Tensor<T>* gx = GradIfNeeded(t, x)) {
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < seq; ++s) {
          if (s == token) continue;
          const std::size_t base = (b * seq + s) * d;
          for (std::size_t c = 0; c < d; ++c) (*gx)[base + c] += g[base + c];
        }
      }
    }
    if (Tensor<T>* gv = GradIfNeeded(t, v)) {
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * seq + token) * d;
        for (std::size_t c = 0; c < d; ++c) (*gv)[b * d + c] += g[base + c];
      }
    }
  });
}

template <typename T>
Var<T> StackTokens(const std::vector<Var<T>>& tokens) {
  if (tokens.empty()) throw Error(ErrorKind::kShape, "stack_tokens: no inputs");
  const Shape& first = tokens.front().shape();
  RequireRank("stack_tokens", first, 2);
  const std::size_t batch = first[0], d = first[1], n = tokens.size();
  Tensor<T> out({batch, n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& tv = tokens[i].value();
    if (tv.shape() != first) ShapeError("stack_tokens", first, tv.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(tv.ptr() + b * d, d, out.ptr() + (b * n + i) * d);
    }
  }
  return tokens.front().tape->Record("stack_tokens", std::move(out), tokens,
                                     [tokens, batch, n, d](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<T>* gi = GradIfNeeded(t, tokens[i]);
      if (!gi) continue;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = g.ptr() + (b * n + i) * d;
        for (std::size_t c = 0; c < d; ++c) (*gi)[b * d + c] += src[c];
      }
    }
  });
}

template <typename T>
Var<T> ConcatTokens(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  RequireRank("concat_tokens", av.shape(), 3);
  RequireRank("concat_tokens", bv.shape(), 3);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    ShapeError("concat_tokens", av.shape(), bv.shape());
  }
  const std::size_t batch = av.dim(0), ta = av.dim(1), tb = bv.dim(1), d = av.dim(2);
  Tensor<T> out({batch, ta + tb, d});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::copy_n(av.ptr() + bi * ta * d, ta * d, out.ptr() + bi * (ta + tb) * d);
    std::copy_n(bv.ptr() + bi * tb * d, tb * d, out.ptr() + (bi * (ta + tb) + ta) * d);
  }
  return a.tape->Record("concat_tokens", std::move(out), {a, b},
                        [a, b, batch, ta, tb, d](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    if (Tensor<T>* ga = GradIfNeeded(t, a)) {
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* src = g.ptr() + bi * (ta + tb) * d;
        for (std::size_t i = 0; i < ta * d; ++i) (*ga)[bi * ta * d + i] += src[i];
      }
    }
    if (Tensor<T>* gb = GradIfNeeded(t, b)) {
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* src = g.ptr() + (bi * (ta + tb) + ta) * d;
        for (std::size_t i = 0; i < tb * d; ++i) (*gb)[bi * tb * d + i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> BroadcastBatch(Var<T> v, std::size_t batch) {
  const auto& vv = v.value();
  Shape shape{batch};
  shape.insert(shape.end(), vv.shape().begin(), vv.shape().end());
  Tensor<T> out(shape);
  const std::size_t inner = vv.size();
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(vv.ptr(), inner, out.ptr() + b * inner);
  return v.tape->Record("broadcast_batch", std::move(out), {v},
                        [v, inner](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gv = t.grad(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i % inner] += g[i];
  });
}

template <typename T>
Var<T> Dropout(Var<T> x, T rate, std::mt19937_64& rng) {
  if (rate <= T{0}) return x;
  if (rate >= T{1}) throw Error(ErrorKind::kConfig, "dropout rate must be < 1");
  const auto& xv = x.value();
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T factor = T{1} / (T{1} - rate);
  std::vector<T> mask(xv.size());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? factor : T{0};
    out[i] = xv[i] * mask[i];
  }
  return x.tape->Record("dropout", std::move(out), {x},
                        [x, mask = std::move(mask)](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> Reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value();
  out.Reshape(std::move(shape));
  return x.tape->Record("reshape", std::move(out), {x}, [x](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> SliceRows(Var<T> x, std::size_t start, std::size_t count) {
  const auto& xv = x.value();
  RequireRank("slice_rows", xv.shape(), 2);
  const std::size_t d = xv.dim(1);
  if (count == 0 || start + count > xv.dim(0)) {
    throw Error(ErrorKind::kShape, "slice_rows: rows [" + std::to_string(start) + ", " +
                                       std::to_string(start + count) + ") out of range for " +
                                       ShapeToString(xv.shape()));
  }
  Tensor<T> out({count, d});
  std::copy_n(xv.ptr() + start * d, count * d, out.ptr());
  return x.tape->Record("slice_rows", std::move(out), {x},
                        [x, start, d](Tape<T>& t, std::uint32_t o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[start * d + i] += g[i];
  });
}

#define FEDACC_INSTANTIATE_OPS(T)                                                  \
  template Var<T> Add(Var<T>, Var<T>);                                             \
  template Var<T> Mul(Var<T>, Var<T>);                                             \
  template Var<T> Scale(Var<T>, T);                                                \
  template Var<T> AddBroadcast(Var<T>, Var<T>);                                    \
  template Var<T> MatMul(Var<T>, Var<T>);                                          \
  template Var<T> Linear(Var<T>, Var<T>, std::optional<Var<T>>);                   \
  template Var<T> Gelu(Var<T>);                                                    \
  template Var<T> Softmax(Var<T>);                                                 \
  template Var<T> LayerNorm(Var<T>, Var<T>, Var<T>, T);                            \
  template Var<T> Attention(Var<T>, std::size_t);                                  \
  template Var<T> Sum(Var<T>);                                                     \
  template Var<T> Mean(Var<T>);                                                    \
  template Var<T> CrossEntropy(Var<T>, std::span<const int>);                      \
  template Var<T> SelectToken(Var<T>, std::size_t);                                \
  template Var<T> ReplaceToken(Var<T>, std::size_t, Var<T>);                       \
  template Var<T> StackTokens(const std::vector<Var<T>>&);                         \
  template Var<T> ConcatTokens(Var<T>, Var<T>);                                    \
  template Var<T> BroadcastBatch(Var<T>, std::size_t);                             \
  template Var<T> Dropout(Var<T>, T, std::mt19937_64&);                            \
  template Var<T> Reshape(Var<T>, Shape);                                          \
  template Var<T> SliceRows(Var<T>, std::size_t, std::size_t);

FEDACC_INSTANTIATE_OPS(float)
FEDACC_INSTANTIATE_OPS(double)

#undef FEDACC_INSTANTIATE_OPS

}  // namespace fedacc::ops

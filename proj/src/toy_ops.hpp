// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Elementwise and row-wise kernels shared by the batched trainer and the
// incremental decoder.

#ifndef LAYERLAB_SRC_TOY_OPS_HPP_
#define LAYERLAB_SRC_TOY_OPS_HPP_

#include <Eigen/Dense>
#include <cmath>

#include "layerlab/probekit.hpp"

namespace layerlab::toy_ops {

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

template <typename T>
void layernorm_forward(const RowMatrix<T>& x, const Vec<T>& g, const Vec<T>& b, RowMatrix<T>& xhat,
                       Vec<T>& rstd, RowMatrix<T>& y) {
  const Eigen::Index n = x.rows();
  const auto d = static_cast<T>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).sum() / d;
    const T var = (x.row(i).array() - mean).square().sum() / d;
    rstd[i] = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd[i];
  }
  y = (xhat.array().rowwise() * g.transpose().array()).rowwise() + b.transpose().array();
}

// dx = d(LayerNorm)/dx applied to dy; accumulates the gain and bias grads.
template <typename T>
RowMatrix<T> layernorm_backward(const RowMatrix<T>& dy, const RowMatrix<T>& xhat,
                                const Vec<T>& rstd, const Vec<T>& g, Vec<T>& dg, Vec<T>& db) {
  dg += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  db += dy.colwise().sum().transpose();
  RowMatrix<T> dxhat = dy.array().rowwise() * g.transpose().array();
  const auto d = static_cast<T>(dy.cols());
  RowMatrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() / d;
    const T m2 = (dxhat.row(i).array() * xhat.row(i).array()).sum() / d;
    dx.row(i) = rstd[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

// GELU, tanh approximation: g = u/2 * (1 + tanh(c (u + a u^3))). The tanh
// is kept for the backward pass.
template <typename T>
void gelu_forward(const RowMatrix<T>& u, RowMatrix<T>& tanh_u, RowMatrix<T>& g) {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  tanh_u = (c * (u.array() + a * u.array().cube())).tanh();
  g = T(0.5) * u.array() * (T(1) + tanh_u.array());
}

// du *= dg/du, elementwise.
template <typename T>
void gelu_backward(const RowMatrix<T>& u, const RowMatrix<T>& tanh_u, RowMatrix<T>& du) {
  const T c = static_cast<T>(kGeluC);
  const T a = static_cast<T>(kGeluA);
  const auto t = tanh_u.array();
  const auto x = u.array();
  du.array() *= T(0.5) * (T(1) + t) +
                T(0.5) * x * (T(1) - t.square()) * c * (T(1) + T(3) * a * x.square());
}

}  // namespace layerlab::toy_ops

#endif  // LAYERLAB_SRC_TOY_OPS_HPP_

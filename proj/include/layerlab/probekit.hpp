// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Linear probes over per-layer hidden states.
//
// One probe is trained per (layer, step) pair: a multinomial logistic
// regression (affine map + softmax) that reads the step's result class out
// of that layer's final-token vector. The resulting layers x steps accuracy
// grid shows where in depth each intermediate value becomes decodable.

#ifndef LAYERLAB_PROBEKIT_HPP_
#define LAYERLAB_PROBEKIT_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "layerlab/tensorio.hpp"

namespace layerlab {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureMatrix = RowMatrix<float>;

struct ProbeTrainConfig {
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool standardize = true;

  void validate() const;
};

struct ProbeModel {
  int n_classes = 0;
  int hidden_dim = 0;
  RowMatrix<float> weights;  // [n_classes, hidden_dim]
  Eigen::VectorXf bias;      // [n_classes]
  Eigen::VectorXf mean;      // per-feature, from the training split
  Eigen::VectorXf scale;     // per-feature, > 0

  // Argmax class per row; ties go to the lowest class index.
  std::vector<int> predict(const FeatureMatrix& features) const;
};

// Mean softmax cross-entropy of logits = X W^T + b over the rows of X, with
// gradients written to dW and db when non-null. Templated so the same code
// runs in float for training and in double for gradient checks.
template <typename T>
T softmax_xent(const RowMatrix<T>& weights, const Eigen::Matrix<T, Eigen::Dynamic, 1>& bias,
               const RowMatrix<T>& x, std::span<const int> labels, RowMatrix<T>* d_weights,
               Eigen::Matrix<T, Eigen::Dynamic, 1>* d_bias) {
  const Eigen::Index n = x.rows();
  RowMatrix<T> logits = x * weights.transpose();
  logits.rowwise() += bias.transpose();
  T loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mx = logits.row(i).maxCoeff();
    logits.row(i).array() = (logits.row(i).array() - mx).exp();
    const T z = logits.row(i).sum();
    logits.row(i) /= z;
    loss -= std::log(logits(i, labels[static_cast<std::size_t>(i)]));
  }
  loss /= static_cast<T>(n);
  if (d_weights != nullptr || d_bias != nullptr) {
    // logits now hold probabilities; turn them into dL/dlogits.
    for (Eigen::Index i = 0; i < n; ++i) logits(i, labels[static_cast<std::size_t>(i)]) -= T(1);
    logits /= static_cast<T>(n);
    if (d_weights != nullptr) *d_weights = logits.transpose() * x;
    if (d_bias != nullptr) *d_bias = logits.colwise().sum().transpose();
  }
  return loss;
}

// Throws ShapeError on empty input, label/row mismatch, or labels outside
// [0, n_classes).
ProbeModel train_probe(const FeatureMatrix& features, std::span<const int> labels, int n_classes,
                       const ProbeTrainConfig& config);

double eval_probe(const ProbeModel& model, const FeatureMatrix& features,
                  std::span<const int> labels);

struct AccuracyMatrix {
  std::size_t n_layers = 0;
  std::size_t n_steps = 0;
  std::vector<double> values;  // row-major [layer][step]
  std::size_t n_test = 0;
  std::vector<std::string> layer_labels;
  std::vector<std::string> step_labels;

  double at(std::size_t layer, std::size_t step) const { return values[layer * n_steps + step]; }
  std::vector<double> step_column(std::size_t step) const;

  std::string to_csv() const;
};

// Features of one layer for the listed samples, as a [samples, hidden_dim]
// matrix.
FeatureMatrix layer_features(const ActivationSet& set, std::size_t layer,
                             std::span<const std::size_t> samples);

// Seed of the probe for (layer, step).
std::uint64_t probe_seed(std::uint64_t base, std::size_t layer, std::size_t step);

// Trains and tests n_layers * n_steps independent probes. Parallel over
// LL_THREADS workers; results do not depend on the worker count.
AccuracyMatrix probe_all(const ActivationSet& activations, const SplitIndex& split,
                         const ProbeTrainConfig& config);

struct OnsetReport {
  double threshold = 0.5;
  int persistence = 2;
  std::vector<std::optional<std::size_t>> onset_layer;  // one per step
};

// First layer where `persistence` consecutive accuracies reach `threshold`.
OnsetReport onset_layers(const AccuracyMatrix& matrix, double threshold = 0.5,
                         int persistence = 2);

nlohmann::ordered_json to_json(const ProbeTrainConfig& config);
nlohmann::ordered_json to_json(const OnsetReport& report);
nlohmann::ordered_json probe_report(const AccuracyMatrix& matrix, const OnsetReport& onsets,
                                    const ProbeTrainConfig& config, const SplitIndex& split);

}  // namespace layerlab

#endif  // LAYERLAB_PROBEKIT_HPP_

// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "layerlab/probekit.hpp"

#include <cstdio>
#include <numeric>

#include "layerlab/error.hpp"
#include "layerlab/parallel.hpp"
#include "layerlab/rng.hpp"

namespace layerlab {
namespace {

FeatureMatrix standardized(const FeatureMatrix& x, const ProbeModel& m) {
  FeatureMatrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      out(i, f) = static_cast<float>((static_cast<double>(x(i, f)) - m.mean[f]) / m.scale[f]);
    }
  }
  return out;
}

template <typename E>
[[noreturn]] void rethrow_with_context(const E& e, const std::string& context) {
  throw E(context + ": " + e.what());
}

}  // namespace

void ProbeTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("probe epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("probe batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("probe learning_rate must be positive");
}

std::vector<int> ProbeModel::predict(const FeatureMatrix& features) const {
  if (features.cols() != hidden_dim)
    throw ShapeError("probe expects " + std::to_string(hidden_dim) + " features, got " +
                     std::to_string(features.cols()));
  RowMatrix<float> logits = standardized(features, *this) * weights.transpose();
  logits.rowwise() += bias.transpose();
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < n_classes; ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

ProbeModel train_probe(const FeatureMatrix& features, std::span<const int> labels, int n_classes,
                       const ProbeTrainConfig& config) {
  config.validate();
  const Eigen::Index n = features.rows();
  const Eigen::Index dim = features.cols();
  if (n == 0 || dim == 0) throw ShapeError("probe training needs a non-empty feature matrix");
  if (static_cast<std::size_t>(n) != labels.size())
    throw ShapeError("probe features and labels disagree on sample count");
  if (n_classes < 1 || n < n_classes)
    throw ShapeError("probe training needs at least n_classes samples");
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw ShapeError("label outside [0, n_classes)");
  }

  ProbeModel model;
  model.n_classes = n_classes;
  model.hidden_dim = static_cast<int>(dim);
  model.mean = Eigen::VectorXf::Zero(dim);
  model.scale = Eigen::VectorXf::Ones(dim);
  if (config.standardize) {
    for (Eigen::Index f = 0; f < dim; ++f) {
      double sum = 0;
      for (Eigen::Index i = 0; i < n; ++i) sum += features(i, f);
      const double mean = sum / static_cast<double>(n);
      double sq = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = features(i, f) - mean;
        sq += d * d;
      }
      const double sd = std::sqrt(sq / static_cast<double>(n));
      model.mean[f] = static_cast<float>(mean);
      model.scale[f] = sd > 0 ? static_cast<float>(sd) : 1.0f;
    }
  }
  const FeatureMatrix x = standardized(features, model);

  model.weights = RowMatrix<float>::Zero(n_classes, dim);
  model.bias = Eigen::VectorXf::Zero(n_classes);
  RowMatrix<float> d_weights;
  Eigen::VectorXf d_bias;
  const auto lr = static_cast<float>(config.learning_rate);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<int> batch_labels;
  Rng rng(config.seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<Eigen::Index>(order), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const FeatureMatrix xb = x(rows, Eigen::all);
      batch_labels.clear();
      for (Eigen::Index r : rows) batch_labels.push_back(labels[static_cast<std::size_t>(r)]);
      const float loss =
          softmax_xent<float>(model.weights, model.bias, xb, batch_labels, &d_weights, &d_bias);
      if (!std::isfinite(loss)) throw TrainingError("probe loss became non-finite");
      model.weights -= lr * d_weights;
      model.bias -= lr * d_bias;
    }
  }
  return model;
}

double eval_probe(const ProbeModel& model, const FeatureMatrix& features,
                  std::span<const int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ShapeError("probe features and labels disagree on sample count");
  if (labels.empty()) return 0.0;
  const auto pred = model.predict(features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<double> AccuracyMatrix::step_column(std::size_t step) const {
  std::vector<double> col(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) col[l] = at(l, step);
  return col;
}

std::string AccuracyMatrix::to_csv() const {
  std::string out = "layer";
  for (const auto& s : step_labels) out += "," + s;
  out += '\n';
  char buf[32];
  for (std::size_t l = 0; l < n_layers; ++l) {
    out += std::to_string(l);
    for (std::size_t s = 0; s < n_steps; ++s) {
      std::snprintf(buf, sizeof(buf), ",%.4f", at(l, s));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FeatureMatrix layer_features(const ActivationSet& set, std::size_t layer,
                             std::span<const std::size_t> samples) {
  if (layer >= set.n_layers()) throw ShapeError("layer index out of range");
  FeatureMatrix out(static_cast<Eigen::Index>(samples.size()),
                    static_cast<Eigen::Index>(set.hidden_dim()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto v = set.vector(samples[i], layer);
    std::copy(v.begin(), v.end(), out.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

std::uint64_t probe_seed(std::uint64_t base, std::size_t layer, std::size_t step) {
  return derive_seed(base, {layer, step});
}

AccuracyMatrix probe_all(const ActivationSet& activations, const SplitIndex& split,
                         const ProbeTrainConfig& config) {
  config.validate();
  const std::size_t n_steps = activations.n_steps();
  const std::size_t n_layers = activations.n_layers();
  const int n_classes = activations.max_value() + 1;
  for (std::size_t id : split.train_ids) {
    if (id >= activations.n_samples()) throw ShapeError("split index out of range");
  }
  for (std::size_t id : split.test_ids) {
    if (id >= activations.n_samples()) throw ShapeError("split index out of range");
  }

  AccuracyMatrix m;
  m.n_layers = n_layers;
  m.n_steps = n_steps;
  m.n_test = split.test_ids.size();
  m.values.assign(n_layers * n_steps, 0.0);
  for (std::size_t l = 0; l < n_layers; ++l) m.layer_labels.push_back(std::to_string(l));
  for (std::size_t s = 0; s < n_steps; ++s) m.step_labels.push_back("step" + std::to_string(s + 1));

  std::vector<std::vector<int>> train_labels(n_steps), test_labels(n_steps);
  for (std::size_t s = 0; s < n_steps; ++s) {
    for (std::size_t id : split.train_ids)
      train_labels[s].push_back(activations.meta()[id].step_results[s]);
    for (std::size_t id : split.test_ids)
      test_labels[s].push_back(activations.meta()[id].step_results[s]);
  }

  parallel_for(n_layers, worker_threads(), [&](std::size_t layer) {
    const FeatureMatrix train = layer_features(activations, layer, split.train_ids);
    const FeatureMatrix test = layer_features(activations, layer, split.test_ids);
    for (std::size_t step = 0; step < n_steps; ++step) {
      const std::string context =
          "probe (layer " + std::to_string(layer) + ", step " + std::to_string(step + 1) + ")";
      ProbeTrainConfig cfg = config;
      cfg.seed = probe_seed(config.seed, layer, step);
      try {
        const ProbeModel model = train_probe(train, train_labels[step], n_classes, cfg);
        m.values[layer * n_steps + step] = eval_probe(model, test, test_labels[step]);
      } catch (const ShapeError& e) {
        rethrow_with_context(e, context);
      } catch (const TrainingError& e) {
        rethrow_with_context(e, context);
      } catch (const ConfigError& e) {
        rethrow_with_context(e, context);
      }
    }
  });
  return m;
}

OnsetReport onset_layers(const AccuracyMatrix& matrix, double threshold, int persistence) {
  if (!(threshold > 0 && threshold <= 1)) throw ConfigError("onset threshold must be in (0, 1]");
  if (persistence < 1) throw ConfigError("onset persistence must be >= 1");
  OnsetReport report;
  report.threshold = threshold;
  report.persistence = persistence;
  const auto need = static_cast<std::size_t>(persistence);
  for (std::size_t s = 0; s < matrix.n_steps; ++s) {
    std::optional<std::size_t> onset;
    std::size_t run = 0;
    for (std::size_t l = 0; l < matrix.n_layers; ++l) {
      run = matrix.at(l, s) >= threshold ? run + 1 : 0;
      if (run == need) {
        onset = l + 1 - need;
        break;
      }
    }
    report.onset_layer.push_back(onset);
  }
  return report;
}

nlohmann::ordered_json to_json(const ProbeTrainConfig& config) {
  nlohmann::ordered_json j;
  j["epochs"] = config.epochs;
  j["batch_size"] = config.batch_size;
  j["learning_rate"] = config.learning_rate;
  j["seed"] = config.seed;
  j["standardize"] = config.standardize;
  j["optimizer"] = "minibatch_sgd";
  return j;
}

nlohmann::ordered_json to_json(const OnsetReport& report) {
  nlohmann::ordered_json j;
  j["threshold"] = report.threshold;
  j["persistence"] = report.persistence;
  nlohmann::ordered_json onsets = nlohmann::ordered_json::array();
  for (const auto& o : report.onset_layer) {
    if (o) {
      onsets.push_back(*o);
    } else {
      onsets.push_back(nullptr);
    }
  }
  j["onset_layer"] = onsets;
  return j;
}

nlohmann::ordered_json probe_report(const AccuracyMatrix& matrix, const OnsetReport& onsets,
                                    const ProbeTrainConfig& config, const SplitIndex& split) {
  nlohmann::ordered_json j;
  j["probe_config"] = to_json(config);
  j["split_seed"] = split.seed;
  j["n_train"] = split.train_ids.size();
  j["n_test"] = matrix.n_test;
  j["n_layers"] = matrix.n_layers;
  j["n_steps"] = matrix.n_steps;
  j["step_labels"] = matrix.step_labels;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < matrix.n_layers; ++l) {
    std::vector<double> row(matrix.values.begin() + static_cast<std::ptrdiff_t>(l * matrix.n_steps),
                            matrix.values.begin() +
                                static_cast<std::ptrdiff_t>((l + 1) * matrix.n_steps));
    rows.push_back(row);
  }
  j["accuracy"] = rows;
  j["onsets"] = to_json(onsets);
  return j;
}

}  // namespace layerlab

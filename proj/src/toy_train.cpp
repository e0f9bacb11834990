// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "layerlab/error.hpp"
#include "layerlab/rng.hpp"
#include "layerlab/toymodel.hpp"

namespace layerlab {
namespace {

struct FlatTensor {
  std::string name;
  float* data = nullptr;
  std::size_t size = 0;
};

std::vector<FlatTensor> flat_view(ToyParams<float>& p) {
  std::vector<FlatTensor> out;
  p.visit([&](const std::string& name, auto& t) {
    out.push_back({name, t.data(), static_cast<std::size_t>(t.size())});
  });
  return out;
}

void set_zero(ToyParams<float>& p) {
  p.visit([](const std::string&, auto& t) { t.setZero(); });
}

bool decays(const std::string& name) {
  return name.find(".w_") != std::string::npos || name == "w_out";
}

double scheduled_lr(const TrainHyperparams& h, int step, int total) {
  if (h.warmup_steps > 0 && step < h.warmup_steps) {
    return h.learning_rate * static_cast<double>(step + 1) / h.warmup_steps;
  }
  const int decay_steps = std::max(1, total - h.warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(step - h.warmup_steps) / static_cast<double>(decay_steps));
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return h.learning_rate * (h.min_lr_ratio + (1.0 - h.min_lr_ratio) * cosine);
}

AdamState fresh_adam(const ToyModel& model) {
  const int vocab = DslVocab::get().size();
  return AdamState{ToyParams<float>::zeros(model.config(), vocab),
                   ToyParams<float>::zeros(model.config(), vocab), 0};
}

}  // namespace

void TrainHyperparams::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (min_lr_ratio < 0 || min_lr_ratio > 1) throw ConfigError("min_lr_ratio must be in [0, 1]");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must be in [0, 1)");
  if (grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
}

std::string cot_target(const ChainProblem& p, int removed_steps) {
  const int start = std::clamp(removed_steps, 0, p.n_steps);
  std::string out;
  for (int i = start; i < p.n_steps; ++i) {
    out += p.var_names[static_cast<std::size_t>(i)];
    out += '=';
    out += format_value(p.step_results[static_cast<std::size_t>(i)], p.format);
    out += "; ";
  }
  out += format_value(p.answer(), p.format);
  return out;
}

TrainExample make_example(const ChainProblem& p, int removed_steps, const ToyConfig& cfg) {
  const DslVocab& vocab = DslVocab::get();
  TrainExample ex;
  ex.tokens.push_back(vocab.bos());
  const auto prompt = vocab.encode(render_prompt(p, PromptStyle::TrainedDirect).text);
  ex.tokens.insert(ex.tokens.end(), prompt.begin(), prompt.end());
  ex.prompt_len = ex.tokens.size();
  const auto target = vocab.encode(cot_target(p, removed_steps));
  ex.tokens.insert(ex.tokens.end(), target.begin(), target.end());
  ex.tokens.push_back(vocab.eos());
  if (static_cast<int>(ex.tokens.size()) > cfg.context_len)
    throw ConfigError("training sequence for " + p.id + " has " +
                      std::to_string(ex.tokens.size()) + " tokens, context is " +
                      std::to_string(cfg.context_len));
  return ex;
}

TokenBatch make_batch(std::span<const TrainExample* const> examples) {
  TokenBatch batch;
  batch.batch = static_cast<int>(examples.size());
  for (const auto* ex : examples) {
    batch.length = std::max(batch.length, static_cast<int>(ex->tokens.size()));
  }
  const auto n = static_cast<std::size_t>(batch.batch) * static_cast<std::size_t>(batch.length);
  batch.tokens.assign(n, DslVocab::get().eos());
  batch.targets.assign(n, -1);
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& tok = examples[b]->tokens;
    const std::size_t row = b * static_cast<std::size_t>(batch.length);
    std::copy(tok.begin(), tok.end(), batch.tokens.begin() + static_cast<std::ptrdiff_t>(row));
    for (std::size_t t = examples[b]->prompt_len - 1; t + 1 < tok.size(); ++t) {
      batch.targets[row + t] = tok[t + 1];
    }
  }
  return batch;
}

StageRecord train_stage(ToyModel& model, AdamState& adam, const std::vector<TrainExample>& examples,
                        const TrainHyperparams& hyper, int stage_index, int removed_steps) {
  hyper.validate();
  if (examples.empty()) throw ConfigError("no training examples");
  StageRecord record;
  record.stage_index = stage_index;
  record.removed_steps = removed_steps;
  record.epochs = hyper.epochs;
  record.hyper = hyper;

  const ToyConfig& cfg = model.config();
  const int vocab = DslVocab::get().size();
  ToyParams<float> grads = ToyParams<float>::zeros(cfg, vocab);
  auto params_flat = flat_view(model.mutable_params());
  auto grads_flat = flat_view(grads);
  auto m_flat = flat_view(adam.m);
  auto v_flat = flat_view(adam.v);

  const std::size_t batch_size = static_cast<std::size_t>(hyper.batch_size);
  const int steps_per_epoch = static_cast<int>((examples.size() + batch_size - 1) / batch_size);
  const int total_steps = steps_per_epoch * hyper.epochs;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(hyper.seed, {static_cast<std::uint64_t>(stage_index)}));
  std::vector<const TrainExample*> picked;

  int step = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      picked.clear();
      for (std::size_t i = start; i < end; ++i) picked.push_back(&examples[order[i]]);
      const TokenBatch batch = make_batch(picked);

      set_zero(grads);
      const auto result = forward_backward<float>(cfg, model.params(), batch, &grads);
      if (!std::isfinite(result.loss))
        throw TrainingError("loss diverged at stage " + std::to_string(stage_index) + ", epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(step));
      epoch_loss += result.loss;

      double sq = 0;
      for (const auto& g : grads_flat) {
        for (std::size_t i = 0; i < g.size; ++i) sq += static_cast<double>(g.data[i]) * g.data[i];
      }
      const double norm = std::sqrt(sq);
      const float clip =
          hyper.grad_clip > 0 && norm > hyper.grad_clip ? static_cast<float>(hyper.grad_clip / norm) : 1.0f;

      ++adam.step;
      const double lr = scheduled_lr(hyper, step, total_steps);
      const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(adam.step));
      const auto b1 = static_cast<float>(hyper.beta1);
      const auto b2 = static_cast<float>(hyper.beta2);
      const auto step_size = static_cast<float>(lr / bc1);
      const auto inv_bc2 = static_cast<float>(1.0 / bc2);
      const auto eps = static_cast<float>(hyper.adam_eps);
      for (std::size_t k = 0; k < params_flat.size(); ++k) {
        float* w = params_flat[k].data;
        const float* g = grads_flat[k].data;
        float* m = m_flat[k].data;
        float* v = v_flat[k].data;
        const float wd = decays(params_flat[k].name) ? static_cast<float>(lr * hyper.weight_decay) : 0.0f;
        for (std::size_t i = 0; i < params_flat[k].size; ++i) {
          const float gi = g[i] * clip;
          m[i] = b1 * m[i] + (1.0f - b1) * gi;
          v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
          w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps) + wd * w[i];
        }
      }
      ++step;
    }
    epoch_loss /= steps_per_epoch;
    record.loss_curve.push_back(epoch_loss);
    if (hyper.log_every > 0 && (epoch + 1) % hyper.log_every == 0) {
      std::fprintf(stderr, "[train] stage %d epoch %d/%d loss %.5f\n", stage_index, epoch + 1,
                   hyper.epochs, epoch_loss);
    }
  }
  record.optimizer_steps = step;
  record.final_loss = record.loss_curve.empty() ? 0.0 : record.loss_curve.back();
  return record;
}

ToyModel train_explicit(const ToyConfig& cfg, const std::vector<ChainProblem>& problems,
                        const TrainHyperparams& hyper) {
  ToyModel model(cfg);
  std::vector<TrainExample> examples;
  examples.reserve(problems.size());
  for (const auto& p : problems) examples.push_back(make_example(p, 0, cfg));
  AdamState adam = fresh_adam(model);
  model.mutable_history().push_back(train_stage(model, adam, examples, hyper, 0, 0));
  return model;
}

std::vector<CurriculumStage> make_curriculum(int max_steps, const TrainHyperparams& hyper) {
  std::vector<CurriculumStage> stages;
  for (int s = 0; s <= max_steps; ++s) stages.push_back({s, hyper, true});
  return stages;
}

InternalizeResult internalize(const ToyModel& model, const std::vector<ChainProblem>& problems,
                              const std::vector<CurriculumStage>& curriculum) {
  InternalizeResult out{model, {}};
  AdamState adam = fresh_adam(model);
  for (std::size_t i = 0; i < curriculum.size(); ++i) {
    const CurriculumStage& stage = curriculum[i];
    if (stage.stage_index < 0) throw ConfigError("curriculum stage index must be >= 0");
    if (i > 0 && stage.reset_optimizer) adam = fresh_adam(model);
    std::vector<TrainExample> examples;
    examples.reserve(problems.size());
    for (const auto& p : problems) {
      examples.push_back(make_example(p, stage.stage_index, model.config()));
    }
    try {
      out.model.mutable_history().push_back(
          train_stage(out.model, adam, examples, stage.hyper, stage.stage_index, stage.stage_index));
    } catch (const TrainingError& e) {
      throw TrainingError("internalization stage " + std::to_string(stage.stage_index) +
                          " failed: " + e.what());
    }
    out.stage_checkpoints.push_back(out.model);
  }
  return out;
}

}  // namespace layerlab

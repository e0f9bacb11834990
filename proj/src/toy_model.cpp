// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "layerlab/error.hpp"
#include "layerlab/parallel.hpp"
#include "layerlab/toymodel.hpp"
#include "toy_ops.hpp"

namespace layerlab {
namespace {

Eigen::RowVectorXf layernorm_row(const Eigen::RowVectorXf& x, const Eigen::VectorXf& g,
                                 const Eigen::VectorXf& b) {
  const float d = static_cast<float>(x.size());
  const float mean = x.sum() / d;
  const float var = (x.array() - mean).square().sum() / d;
  const float rstd = 1.0f / std::sqrt(var + static_cast<float>(toy_ops::kLayerNormEps));
  return ((x.array() - mean) * rstd * g.transpose().array() + b.transpose().array()).matrix();
}

int argmax_lowest(const Eigen::VectorXf& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<int> prompt_tokens(std::string_view prompt) {
  const DslVocab& vocab = DslVocab::get();
  std::vector<int> ids{vocab.bos()};
  const auto body = vocab.encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

}  // namespace

DslVocab::DslVocab() {
  for (int& id : char_to_id_) id = -1;
  for (char c = '0'; c <= '9'; ++c) tokens_.emplace_back(1, c);
  for (char c = 'A'; c <= 'J'; ++c) tokens_.emplace_back(1, c);
  for (char c : std::string_view("=+-;.?#\n ")) tokens_.emplace_back(1, c);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    char_to_id_[static_cast<unsigned char>(tokens_[i][0])] = static_cast<int>(i);
  }
  bos_ = static_cast<int>(tokens_.size());
  tokens_.emplace_back("<s>");
  eos_ = static_cast<int>(tokens_.size());
  tokens_.emplace_back("</s>");
}

const DslVocab& DslVocab::get() {
  static const DslVocab vocab;
  return vocab;
}

bool DslVocab::encode_into(std::string_view text, std::vector<int>& ids,
                          std::size_t& bad_pos) const {
  ids.clear();
  ids.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text.substr(i, 4) == "</s>") {
      ids.push_back(eos_);
      i += 4;
    } else if (text.substr(i, 3) == "<s>") {
      ids.push_back(bos_);
      i += 3;
    } else {
      const int id = char_to_id_[static_cast<unsigned char>(text[i])];
      if (id < 0) {
        bad_pos = i;
        return false;
      }
      ids.push_back(id);
      ++i;
    }
  }
  return true;
}

std::optional<std::vector<int>> DslVocab::try_encode(std::string_view text) const {
  std::vector<int> ids;
  std::size_t bad = 0;
  if (!encode_into(text, ids, bad)) return std::nullopt;
  return ids;
}

std::vector<int> DslVocab::encode(std::string_view text) const {
  std::vector<int> ids;
  std::size_t bad = 0;
  if (!encode_into(text, ids, bad))
    throw ConfigError(std::string("character '") + text[bad] + "' at position " +
                      std::to_string(bad) + " is outside the DSL vocabulary");
  return ids;
}

std::string DslVocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) throw ShapeError("token id out of range");
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

ToyModel::ToyModel(const ToyConfig& cfg)
    : config_(cfg), params_(ToyParams<float>::init(cfg, DslVocab::get().size(), cfg.seed)) {}

ToyModel::ToyModel(const ToyConfig& cfg, ToyParams<float> params, std::vector<StageRecord> history)
    : config_(cfg), params_(std::move(params)), history_(std::move(history)) {
  cfg.validate();
}

Decoder::Decoder(const ToyModel& model) : model_(model) {
  const auto& cfg = model.config();
  keys_.assign(static_cast<std::size_t>(cfg.n_layers), RowMatrix<float>(cfg.context_len, cfg.d_model));
  values_.assign(static_cast<std::size_t>(cfg.n_layers),
                 RowMatrix<float>(cfg.context_len, cfg.d_model));
}

void Decoder::reset() { pos_ = 0; }

const Eigen::VectorXf& Decoder::feed(int token, std::vector<float>* residuals) {
  const ToyConfig& cfg = model_.config();
  const ToyParams<float>& p = model_.params();
  if (pos_ >= cfg.context_len) throw ConfigError("sequence exceeds the model context");
  if (token < 0 || token >= p.tok_emb.rows()) throw ShapeError("token id out of range");
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const int n = pos_ + 1;

  if (residuals != nullptr) residuals->clear();
  Eigen::RowVectorXf x = p.tok_emb.row(token) + p.pos_emb.row(pos_);
  Eigen::RowVectorXf ctx(d);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& blk = p.blocks[l];
    const Eigen::RowVectorXf h = layernorm_row(x, blk.ln1_g, blk.ln1_b);
    const Eigen::RowVectorXf qkv = h * blk.w_qkv + blk.b_qkv.transpose();
    keys_[l].row(pos_) = qkv.segment(d, d);
    values_[l].row(pos_) = qkv.segment(2 * d, d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const auto q = qkv.segment(head * hd, hd);
      Eigen::VectorXf s = keys_[l].block(0, head * hd, n, hd) * q.transpose() * scale;
      const float mx = s.maxCoeff();
      s = (s.array() - mx).exp();
      s /= s.sum();
      ctx.segment(head * hd, hd) = s.transpose() * values_[l].block(0, head * hd, n, hd);
    }
    x += ctx * blk.w_o + blk.b_o.transpose();
    const Eigen::RowVectorXf h2 = layernorm_row(x, blk.ln2_g, blk.ln2_b);
    RowMatrix<float> u = h2 * blk.w_ff1 + blk.b_ff1.transpose();
    RowMatrix<float> tanh_u, g;
    toy_ops::gelu_forward(u, tanh_u, g);
    x += g * blk.w_ff2 + blk.b_ff2.transpose();
    if (residuals != nullptr) residuals->insert(residuals->end(), x.data(), x.data() + d);
  }
  const Eigen::RowVectorXf hf = layernorm_row(x, p.lnf_g, p.lnf_b);
  logits_ = (hf * p.w_out + p.b_out.transpose()).transpose();
  ++pos_;
  return logits_;
}

std::string generate(const ToyModel& model, std::string_view prompt, int max_new_tokens) {
  const DslVocab& vocab = DslVocab::get();
  const auto ids = prompt_tokens(prompt);
  const int ctx = model.config().context_len;
  if (static_cast<int>(ids.size()) > ctx)
    throw ConfigError("prompt of " + std::to_string(ids.size()) +
                      " tokens exceeds the context of " + std::to_string(ctx));
  if (max_new_tokens <= 0) return {};
  Decoder dec(model);
  const Eigen::VectorXf* logits = nullptr;
  for (int id : ids) logits = &dec.feed(id);
  std::vector<int> out;
  for (int k = 0; k < max_new_tokens; ++k) {
    const int next = argmax_lowest(*logits);
    if (next == vocab.eos()) break;
    out.push_back(next);
    if (dec.position() >= ctx) break;
    logits = &dec.feed(next);
  }
  return vocab.decode(out);
}

ActivationSet export_activations(const ToyModel& model, const std::vector<ChainProblem>& problems,
                                 PromptStyle style) {
  const ToyConfig& cfg = model.config();
  const std::size_t n_layers = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t dim = static_cast<std::size_t>(cfg.d_model);
  const DslVocab& vocab = DslVocab::get();
  std::vector<float> data(problems.size() * n_layers * dim);
  std::vector<SampleMeta> meta(problems.size());
  parallel_for(problems.size(), worker_threads(), [&](std::size_t i) {
    const ChainProblem& p = problems[i];
    const RenderedPrompt prompt = render_prompt(p, style);
    const auto body = vocab.try_encode(prompt.text);
    if (!body) throw ConfigError("prompt " + p.id + " does not tokenize in the DSL vocabulary");
    if (static_cast<int>(body->size()) + 1 > cfg.context_len)
      throw ConfigError("prompt " + p.id + " exceeds the model context");
    Decoder dec(model);
    std::vector<float> residuals;
    dec.feed(vocab.bos());
    for (std::size_t t = 0; t < body->size(); ++t) {
      dec.feed((*body)[t], t + 1 == body->size() ? &residuals : nullptr);
    }
    std::copy(residuals.begin(), residuals.end(), data.begin() + static_cast<std::ptrdiff_t>(i * n_layers * dim));
    SampleMeta& m = meta[i];
    m.problem_id = p.id;
    m.step_results = p.step_results;
    m.max_value = p.max_value;
    m.format = p.format;
    m.style = style;
    m.final_token = vocab.tokens()[static_cast<std::size_t>(body->back())];
  });
  const std::string tag = "layerlab-toy L" + std::to_string(cfg.n_layers) + " d" +
                          std::to_string(cfg.d_model) + " h" + std::to_string(cfg.n_heads) +
                          " ff" + std::to_string(cfg.ff_dim) + " seed" + std::to_string(cfg.seed) +
                          " stages" + std::to_string(model.history().size());
  return ActivationSet(problems.size(), n_layers, dim, std::move(data), std::move(meta), tag);
}

AnswerAccuracy score_outputs(const std::vector<ChainProblem>& problems,
                             const std::vector<std::string>& outputs) {
  if (problems.size() != outputs.size()) throw ShapeError("one output per problem required");
  AnswerAccuracy acc;
  acc.n = problems.size();
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const ChainProblem& p = problems[i];
    const ParsedAnswer parsed = parse_answer(outputs[i], p.format, p.max_value);
    SampleOutcome s;
    s.problem_id = p.id;
    s.output = outputs[i];
    s.status = parsed.status;
    s.predicted = parsed.value;
    s.expected = evaluate_chain(p);
    s.correct = parsed.ok() && parsed.value == s.expected;
    acc.n_correct += s.correct ? 1 : 0;
    acc.n_unparsable += parsed.status == ParseStatus::Unparsable ? 1 : 0;
    acc.samples.push_back(std::move(s));
  }
  acc.accuracy = acc.n > 0 ? static_cast<double>(acc.n_correct) / static_cast<double>(acc.n) : 0.0;
  return acc;
}

AnswerAccuracy answer_accuracy(const ToyModel& model, const std::vector<ChainProblem>& problems,
                               PromptStyle style) {
  std::vector<std::string> outputs(problems.size());
  parallel_for(problems.size(), worker_threads(), [&](std::size_t i) {
    const ChainProblem& p = problems[i];
    const int budget = 8 * p.n_steps + 8;
    outputs[i] = generate(model, render_prompt(p, style).text, budget);
  });
  return score_outputs(problems, outputs);
}

}  // namespace layerlab

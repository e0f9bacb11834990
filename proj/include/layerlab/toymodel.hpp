// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// A small pre-LayerNorm decoder-only transformer over the character-level
// chain DSL, with hand-written backpropagation and Adam.
//
// Training follows the internalization recipe: first learn to emit one
// "VAR=value;" line per step after "####" and then the answer, then
// fine-tune through stages that drop the leading s lines until only the
// answer is left.

#ifndef LAYERLAB_TOYMODEL_HPP_
#define LAYERLAB_TOYMODEL_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "layerlab/chaingen.hpp"
#include "layerlab/probekit.hpp"
#include "layerlab/tensorio.hpp"

namespace layerlab {

// Character-level vocabulary. "<s>" and "</s>" are single tokens; every
// other token is one character.
class DslVocab {
 public:
  static const DslVocab& get();

  int size() const { return static_cast<int>(tokens_.size()); }
  int bos() const { return bos_; }
  int eos() const { return eos_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<std::vector<int>> try_encode(std::string_view text) const;
  // Throws ConfigError naming the first character outside the inventory.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

 private:
  DslVocab();
  bool encode_into(std::string_view text, std::vector<int>& ids, std::size_t& bad_pos) const;

  std::vector<std::string> tokens_;
  int char_to_id_[256];
  int bos_ = 0;
  int eos_ = 0;
};

struct ToyConfig {
  int n_layers = 12;
  int d_model = 128;
  int n_heads = 4;
  int ff_dim = 512;
  int context_len = 128;
  std::uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

template <typename T>
struct ToyParams {
  using Mat = RowMatrix<T>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  struct Block {
    Vec ln1_g, ln1_b;
    Mat w_qkv;  // [d, 3d]; columns are q | k | v, heads contiguous within each
    Vec b_qkv;
    Mat w_o;  // [d, d]
    Vec b_o;
    Vec ln2_g, ln2_b;
    Mat w_ff1;  // [d, ff]
    Vec b_ff1;
    Mat w_ff2;  // [ff, d]
    Vec b_ff2;
  };

  Mat tok_emb;  // [vocab, d]
  Mat pos_emb;  // [context, d]
  std::vector<Block> blocks;
  Vec lnf_g, lnf_b;
  Mat w_out;  // [d, vocab]
  Vec b_out;

  // Calls f(name, tensor) for every parameter in a fixed order; tensor is a
  // Mat or Vec reference.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  static ToyParams zeros(const ToyConfig& cfg, int vocab);
  // GPT-2 style: N(0, 0.02), residual output projections scaled by
  // 1/sqrt(2 * n_layers), unit LayerNorm gains, zero biases.
  static ToyParams init(const ToyConfig& cfg, int vocab, std::uint64_t seed);

  template <typename U>
  ToyParams<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("tok_emb"), self.tok_emb);
    f(std::string("pos_emb"), self.pos_emb);
    for (std::size_t l = 0; l < self.blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      auto& b = self.blocks[l];
      f(p + "ln1_g", b.ln1_g);
      f(p + "ln1_b", b.ln1_b);
      f(p + "w_qkv", b.w_qkv);
      f(p + "b_qkv", b.b_qkv);
      f(p + "w_o", b.w_o);
      f(p + "b_o", b.b_o);
      f(p + "ln2_g", b.ln2_g);
      f(p + "ln2_b", b.ln2_b);
      f(p + "w_ff1", b.w_ff1);
      f(p + "b_ff1", b.b_ff1);
      f(p + "w_ff2", b.w_ff2);
      f(p + "b_ff2", b.b_ff2);
    }
    f(std::string("lnf_g"), self.lnf_g);
    f(std::string("lnf_b"), self.lnf_b);
    f(std::string("w_out"), self.w_out);
    f(std::string("b_out"), self.b_out);
  }
};

// A right-padded batch of token sequences. targets[i] is the token that
// position i should predict, or -1 where no loss is taken.
struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> tokens;   // [batch * length]
  std::vector<int> targets;  // [batch * length]
};

template <typename T>
struct ForwardResult {
  T loss = 0;
  std::size_t n_targets = 0;
  RowMatrix<T> logits;                  // [batch * length, vocab]
  std::vector<RowMatrix<T>> residuals;  // per layer, [batch * length, d]
};

// Full-sequence forward pass, with gradients accumulated into `grads`
// (which must be zero-initialized with matching shapes) when non-null.
// Loss is the mean cross-entropy over positions with a target.
template <typename T>
ForwardResult<T> forward_backward(const ToyConfig& cfg, const ToyParams<T>& params,
                                  const TokenBatch& batch, ToyParams<T>* grads,
                                  bool keep_residuals = false);

struct TrainHyperparams {
  int batch_size = 32;
  int epochs = 10;
  double learning_rate = 1e-3;
  double min_lr_ratio = 0.1;  // cosine decay floor, relative to learning_rate
  int warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int log_every = 0;  // 0 disables progress logging to stderr

  void validate() const;
};

struct StageRecord {
  int stage_index = 0;
  int removed_steps = 0;
  int optimizer_steps = 0;
  int epochs = 0;
  double final_loss = 0;
  std::vector<double> loss_curve;  // mean loss per epoch
  TrainHyperparams hyper;
};

struct AdamState {
  ToyParams<float> m;
  ToyParams<float> v;
  long long step = 0;
};

class ToyModel {
 public:
  explicit ToyModel(const ToyConfig& cfg);
  ToyModel(const ToyConfig& cfg, ToyParams<float> params, std::vector<StageRecord> history);

  const ToyConfig& config() const { return config_; }
  const ToyParams<float>& params() const { return params_; }
  ToyParams<float>& mutable_params() { return params_; }
  const std::vector<StageRecord>& history() const { return history_; }
  std::vector<StageRecord>& mutable_history() { return history_; }

 private:
  ToyConfig config_;
  ToyParams<float> params_;
  std::vector<StageRecord> history_;
};

// Incremental single-sequence inference with a key/value cache.
class Decoder {
 public:
  explicit Decoder(const ToyModel& model);

  void reset();
  int position() const { return pos_; }
  // Consumes one token and returns the logits for the next one. When
  // `residuals` is non-null it receives the post-block residual vector of
  // every layer at this position, layer-major.
  const Eigen::VectorXf& feed(int token, std::vector<float>* residuals = nullptr);

 private:
  const ToyModel& model_;
  int pos_ = 0;
  std::vector<RowMatrix<float>> keys_;  // per layer [context, d]
  std::vector<RowMatrix<float>> values_;
  Eigen::VectorXf logits_;
};

// "C=8; B=3; A=5; 5" with the first `removed_steps` lines dropped.
std::string cot_target(const ChainProblem& p, int removed_steps);

struct TrainExample {
  std::vector<int> tokens;  // <s> prompt target </s>
  std::size_t prompt_len = 0;  // tokens before the first target token
};

// Throws ConfigError if the sequence does not fit the context.
TrainExample make_example(const ChainProblem& p, int removed_steps, const ToyConfig& cfg);

TokenBatch make_batch(std::span<const TrainExample* const> examples);

// One pass of optimization over `examples` at a fixed curriculum stage.
StageRecord train_stage(ToyModel& model, AdamState& adam, const std::vector<TrainExample>& examples,
                        const TrainHyperparams& hyper, int stage_index, int removed_steps);

ToyModel train_explicit(const ToyConfig& cfg, const std::vector<ChainProblem>& problems,
                        const TrainHyperparams& hyper);

struct CurriculumStage {
  int stage_index = 0;  // leading CoT lines removed from the targets
  TrainHyperparams hyper;
  bool reset_optimizer = true;
};

// Stages s = 0..n_steps with the given per-stage hyperparameters.
std::vector<CurriculumStage> make_curriculum(int max_steps, const TrainHyperparams& hyper);

struct InternalizeResult {
  ToyModel model;
  std::vector<ToyModel> stage_checkpoints;
};

// Throws TrainingError naming the stage if the loss diverges.
InternalizeResult internalize(const ToyModel& model, const std::vector<ChainProblem>& problems,
                              const std::vector<CurriculumStage>& curriculum);

// Greedy decoding; ties go to the lowest token id. Stops at </s> (not
// included in the result) or at the context limit.
std::string generate(const ToyModel& model, std::string_view prompt, int max_new_tokens);

ActivationSet export_activations(const ToyModel& model, const std::vector<ChainProblem>& problems,
                                 PromptStyle style = PromptStyle::TrainedDirect);

struct SampleOutcome {
  std::string problem_id;
  std::string output;
  ParseStatus status = ParseStatus::Unparsable;
  int predicted = 0;
  int expected = 0;
  bool correct = false;
};

struct AnswerAccuracy {
  double accuracy = 0;
  std::size_t n = 0;
  std::size_t n_correct = 0;
  std::size_t n_unparsable = 0;
  std::vector<SampleOutcome> samples;
};

AnswerAccuracy score_outputs(const std::vector<ChainProblem>& problems,
                             const std::vector<std::string>& outputs);

// Problems are rendered in their own format; `style` must be TrainedDirect
// for the toy vocabulary.
AnswerAccuracy answer_accuracy(const ToyModel& model, const std::vector<ChainProblem>& problems,
                               PromptStyle style = PromptStyle::TrainedDirect);

nlohmann::ordered_json to_json(const ToyConfig& cfg);
ToyConfig toy_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TrainHyperparams& h);

// Checkpoint container "LLCK" v1: magic, u32 version, u32 header length,
// JSON header (config, vocab, stage history, tensor directory), then the
// f32 little-endian weights in directory order.
std::vector<unsigned char> encode_checkpoint(const ToyModel& model);
ToyModel decode_checkpoint(std::span<const unsigned char> bytes);
void save_checkpoint(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace layerlab

#endif  // LAYERLAB_TOYMODEL_HPP_

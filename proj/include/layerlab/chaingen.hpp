// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Multi-step addition/subtraction chain problems.
//
// A chain with n steps is a straight line of assignments:
//
//   E = 8 ;
//   D = E - 5 ;
//   C = D + 2 ;
//   B = C + 5 ;
//   A = B - 1 ;
//
// step_results holds the value of every variable in computation order
// ([8, 3, 5, 10, 9] above) and is what probes are trained to read out. The
// results are sampled uniformly on [0, M] first and the addends are derived
// from them, so every intermediate value is nonnegative.

#ifndef LAYERLAB_CHAINGEN_HPP_
#define LAYERLAB_CHAINGEN_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "layerlab/rng.hpp"

namespace layerlab {

inline constexpr int kMaxChainSteps = 10;

enum class Format { Original, Reversed, Scaled };
enum class PromptStyle { PromptedInstruct, TrainedDirect, ExplicitCoT };

std::string_view to_string(Format f);
std::string_view to_string(PromptStyle s);
// Throws ConfigError on unknown names. Matching is case-insensitive.
Format parse_format(std::string_view name);
PromptStyle parse_style(std::string_view name);

struct ChainProblem {
  int n_steps = 0;
  int max_value = 19;              // M
  std::vector<int> step_results;   // R_1..R_n, computation order
  std::vector<int> addends;        // addends[i] = step_results[i+1] - step_results[i]
  std::vector<char> var_names;     // var_names[i] is assigned at step i; the last is 'A'
  Format format = Format::Original;
  std::uint64_t seed = 0;
  std::string id;

  int answer() const { return step_results.back(); }
};

struct GenerationSpec {
  int n_steps = 5;
  int max_value = 19;
  int n_samples = 2000;
  std::uint64_t seed = 0;
  Format format = Format::Original;
  bool dedupe = true;

  // Throws ConfigError.
  void validate() const;
};

struct RenderedPrompt {
  std::string text;
  PromptStyle style = PromptStyle::TrainedDirect;
  std::string expected_answer_text;
  std::string problem_id;
};

// Throws ConfigError if the problem violates any chain invariant.
void validate_problem(const ChainProblem& p);

// Draws step results independently and uniformly on [0, M] from `rng` and
// derives addends. The requested format is applied to the result.
ChainProblem generate_chain(const GenerationSpec& spec, Rng& rng);

// Builds a problem from explicit step results (used for worked examples).
ChainProblem chain_from_results(std::vector<int> step_results, int max_value = 19);

// Folds the addends onto the initial value. Reads only step_results[0] and
// the addends, so it is an independent check on the recorded answer.
int evaluate_chain(const ChainProblem& p);

ChainProblem apply_reversal(ChainProblem p);
ChainProblem apply_scaling(ChainProblem p);
ChainProblem with_format(ChainProblem p, Format f);

// Value as it appears in a prompt: "12" or, under Scaled, "1.2".
std::string format_value(int value, Format f);

// Equation lines in display order, each terminated by " ;".
std::vector<std::string> equation_lines(const ChainProblem& p);
std::string equation_block(const ChainProblem& p);

RenderedPrompt render_prompt(const ChainProblem& p, PromptStyle style);

enum class ParseStatus { Ok, Unparsable, NonIntegral, OutOfRange };

struct ParsedAnswer {
  ParseStatus status = ParseStatus::Unparsable;
  int value = 0;  // class label, meaningful only when status == Ok

  bool ok() const { return status == ParseStatus::Ok; }
};

// Reads the first number after an "A=" (falling back to the first
// standalone numeral) and maps it back to an integer class in [0, M].
ParsedAnswer parse_answer(std::string_view output_text, Format f, int max_value = 19);

// Throws ConfigError when dedupe cannot find enough distinct problems.
std::vector<ChainProblem> generate_dataset(const GenerationSpec& spec);

// Line-delimited JSON, one problem per line, rendered in `style`.
std::string problem_to_jsonl(const ChainProblem& p, PromptStyle style);
std::string problems_to_jsonl(const std::vector<ChainProblem>& problems, PromptStyle style);
void write_problems(const std::filesystem::path& path,
                    const std::vector<ChainProblem>& problems, PromptStyle style);

struct ProblemRecord {
  ChainProblem problem;
  PromptStyle style = PromptStyle::TrainedDirect;
  std::string prompt_text;
};
// Throws FormatError with the byte offset of the bad line.
std::vector<ProblemRecord> read_problems(const std::filesystem::path& path);

}  // namespace layerlab

#endif  // LAYERLAB_CHAINGEN_HPP_

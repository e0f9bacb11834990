// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "layerlab/chaingen.hpp"
#include "layerlab/error.hpp"

namespace layerlab {
namespace {

// Evaluates the equation block from its text alone, in whatever order the
// lines appear. Values are kept in tenths so Scaled prompts work too.
std::map<char, long> interpret(const std::string& block) {
  std::map<char, std::string> rhs;
  std::istringstream is(block);
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    EXPECT_EQ(line.substr(1, 3), " = ") << line;
    EXPECT_EQ(line.substr(line.size() - 2), " ;") << line;
    rhs[line[0]] = line.substr(4, line.size() - 6);
  }
  auto tenths = [](const std::string& s) {
    const auto dot = s.find('.');
    if (dot == std::string::npos) return std::stol(s) * 10;
    return std::stol(s.substr(0, dot)) * 10 + std::stol(s.substr(dot + 1));
  };
  std::map<char, long> value;
  while (value.size() < rhs.size()) {
    const std::size_t before = value.size();
    for (const auto& [var, expr] : rhs) {
      if (value.contains(var)) continue;
      if (std::isdigit(static_cast<unsigned char>(expr[0]))) {
        value[var] = tenths(expr);
        continue;
      }
      if (!value.contains(expr[0])) continue;
      const long k = tenths(expr.substr(4));
      value[var] = value[expr[0]] + (expr[2] == '+' ? k : -k);
    }
    if (value.size() == before) {
      ADD_FAILURE() << "unresolvable block:\n" << block;
      break;
    }
  }
  return value;
}

TEST(Render, WorkedExampleDirectPrompt) {
  const ChainProblem p = chain_from_results({8, 3, 5, 10, 9});
  EXPECT_EQ(render_prompt(p, PromptStyle::PromptedInstruct).text,
            "E = 8 ;\nD = E - 5 ;\nC = D + 2 ;\nB = C + 5 ;\nA = B - 1 ;\n"
            "\nQuestion: What is the value of A? You must answer directly with A=xxx.\n"
            "\nAnswer: A=");
  EXPECT_EQ(render_prompt(p, PromptStyle::TrainedDirect).text,
            "E = 8 ;\nD = E - 5 ;\nC = D + 2 ;\nB = C + 5 ;\nA = B - 1 ;\nA=?\n</s></s>####");
  EXPECT_EQ(render_prompt(p, PromptStyle::ExplicitCoT).text,
            "E = 8 ;\nD = E - 5 ;\nC = D + 2 ;\nB = C + 5 ;\nA = B - 1 ;\n"
            "\nQuestion: What is the value of A? Let's think step by step.\n\nAnswer:");
}

TEST(Render, ReverseAndScaleBlocks) {
  const ChainProblem p = chain_from_results({8, 3, 5, 10, 9});
  EXPECT_EQ(equation_block(apply_reversal(p)),
            "A = B - 1 ;\nB = C + 5 ;\nC = D + 2 ;\nD = E - 5 ;\nE = 8 ;\n");
  EXPECT_EQ(equation_block(apply_scaling(p)),
            "E = 0.8 ;\nD = E - 0.5 ;\nC = D + 0.2 ;\nB = C + 0.5 ;\nA = B - 0.1 ;\n");
  const ChainProblem s = apply_scaling(p);
  EXPECT_EQ(s.step_results, p.step_results);  // labels stay integer classes
  EXPECT_EQ(render_prompt(s, PromptStyle::PromptedInstruct).expected_answer_text, "0.9");
  EXPECT_EQ(render_prompt(p, PromptStyle::PromptedInstruct).expected_answer_text, "9");
}

TEST(Render, ZeroAddendIsPlusZero) {
  EXPECT_EQ(equation_block(chain_from_results({4, 4, 0})), "C = 4 ;\nB = C + 0 ;\nA = B - 4 ;\n");
}

TEST(Render, FormatValue) {
  EXPECT_EQ(format_value(0, Format::Scaled), "0.0");
  EXPECT_EQ(format_value(19, Format::Scaled), "1.9");
  EXPECT_EQ(format_value(-7, Format::Scaled), "-0.7");
  EXPECT_EQ(format_value(12, Format::Reversed), "12");
}

TEST(Generate, TextOracleAgreesForEveryFormat) {
  for (Format f : {Format::Original, Format::Reversed, Format::Scaled}) {
    for (int n = 2; n <= kMaxChainSteps; ++n) {
      GenerationSpec spec;
      spec.n_steps = n;
      spec.n_samples = 200;
      spec.seed = 17;
      spec.format = f;
      for (const auto& p : generate_dataset(spec)) {
        const auto values = interpret(equation_block(p));
        ASSERT_EQ(values.size(), static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
          const long r = p.step_results[static_cast<std::size_t>(i)];
          EXPECT_EQ(values.at(p.var_names[static_cast<std::size_t>(i)]), f == Format::Scaled ? r : 10 * r)
              << p.id;
        }
        EXPECT_EQ(evaluate_chain(p), p.answer());
        EXPECT_EQ(p.var_names.back(), 'A');
      }
    }
  }
}

TEST(Generate, VariableNamesAreReverseAlphabetical) {
  const ChainProblem p = chain_from_results({1, 2, 3});
  EXPECT_EQ(p.var_names, (std::vector<char>{'C', 'B', 'A'}));
  std::vector<int> ten(10, 5);
  EXPECT_EQ(chain_from_results(ten).var_names.front(), 'J');
}

TEST(Generate, RejectsBadSpecs) {
  GenerationSpec spec;
  spec.n_steps = 11;
  EXPECT_THROW(generate_dataset(spec), ConfigError);
  spec.n_steps = 1;
  EXPECT_THROW(generate_dataset(spec), ConfigError);
  spec.n_steps = 2;
  spec.max_value = 1;
  spec.n_samples = 5;  // only 4 distinct tuples exist
  EXPECT_THROW(generate_dataset(spec), ConfigError);
  spec.n_samples = 4;
  EXPECT_EQ(generate_dataset(spec).size(), 4u);
  EXPECT_THROW(chain_from_results({3, 25}), ConfigError);
}

TEST(Generate, DedupeAndDeterminism) {
  GenerationSpec spec;
  spec.n_steps = 3;
  spec.n_samples = 2000;
  spec.seed = 99;
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  std::set<std::vector<int>> seen;
  ASSERT_EQ(a.size(), 2000u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step_results, b[i].step_results);
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_TRUE(seen.insert(a[i].step_results).second);
  }
  spec.seed = 100;
  const auto c = generate_dataset(spec);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i].step_results == c[i].step_results;
  EXPECT_LT(same, 10u);

  spec.dedupe = false;
  spec.max_value = 1;
  spec.n_samples = 50;
  EXPECT_EQ(generate_dataset(spec).size(), 50u);
}

TEST(Generate, IdsAreStableAndLabelled) {
  GenerationSpec spec;
  spec.n_steps = 5;
  spec.n_samples = 43;
  spec.format = Format::Reversed;
  EXPECT_EQ(generate_dataset(spec).back().id, "s5-reversed-00042");
}

TEST(ParseAnswer, Cases) {
  EXPECT_EQ(parse_answer("12", Format::Original).value, 12);
  EXPECT_EQ(parse_answer("A=7; A=8", Format::Original).value, 7);
  EXPECT_EQ(parse_answer("C=4; B=9; A= 15; 15", Format::Original).value, 15);
  EXPECT_EQ(parse_answer("the answer is 6.", Format::Original).value, 6);
  EXPECT_EQ(parse_answer("x3 then 4", Format::Original).value, 4);
  EXPECT_EQ(parse_answer("", Format::Original).status, ParseStatus::Unparsable);
  EXPECT_EQ(parse_answer("A=?", Format::Original).status, ParseStatus::Unparsable);
  EXPECT_EQ(parse_answer("20", Format::Original).status, ParseStatus::OutOfRange);
  EXPECT_EQ(parse_answer("A=-1", Format::Original).status, ParseStatus::OutOfRange);
  EXPECT_EQ(parse_answer("2.5", Format::Original).status, ParseStatus::NonIntegral);

  EXPECT_EQ(parse_answer("1.5", Format::Scaled).value, 15);
  EXPECT_EQ(parse_answer("A=0.9", Format::Scaled).value, 9);
  EXPECT_EQ(parse_answer("1", Format::Scaled).value, 10);
  EXPECT_EQ(parse_answer("0.45", Format::Scaled).status, ParseStatus::NonIntegral);
  EXPECT_EQ(parse_answer("2.0", Format::Scaled).status, ParseStatus::OutOfRange);
}

TEST(ParseAnswer, RoundTripsEveryRenderedAnswer) {
  for (Format f : {Format::Original, Format::Reversed, Format::Scaled}) {
    for (int v = 0; v <= 19; ++v) {
      const ParsedAnswer a = parse_answer(format_value(v, f), f);
      ASSERT_TRUE(a.ok());
      EXPECT_EQ(a.value, v);
    }
  }
}

TEST(Names, ParseFormatAndStyle) {
  EXPECT_EQ(parse_format("REVERSE"), Format::Reversed);
  EXPECT_EQ(parse_format("scaled"), Format::Scaled);
  EXPECT_EQ(parse_style("trained_direct"), PromptStyle::TrainedDirect);
  EXPECT_EQ(parse_style("PromptedInstruct"), PromptStyle::PromptedInstruct);
  EXPECT_THROW(parse_format("sideways"), ConfigError);
  EXPECT_THROW(parse_style("chatty"), ConfigError);
}

class JsonlTest : public ::testing::Test {
 protected:
  std::filesystem::path path_ =
      std::filesystem::temp_directory_path() / ("ll_chaingen_" + std::to_string(::getpid()) + ".jsonl");
  void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(JsonlTest, RoundTrip) {
  GenerationSpec spec;
  spec.n_steps = 4;
  spec.n_samples = 30;
  spec.format = Format::Scaled;
  const auto problems = generate_dataset(spec);
  write_problems(path_, problems, PromptStyle::PromptedInstruct);
  const auto back = read_problems(path_);
  ASSERT_EQ(back.size(), problems.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    const ChainProblem& p = back[i].problem;
    EXPECT_EQ(p.id, problems[i].id);
    EXPECT_EQ(p.step_results, problems[i].step_results);
    EXPECT_EQ(p.addends, problems[i].addends);
    EXPECT_EQ(p.var_names, problems[i].var_names);
    EXPECT_EQ(p.format, Format::Scaled);
    EXPECT_EQ(p.seed, problems[i].seed);
    EXPECT_EQ(back[i].style, PromptStyle::PromptedInstruct);
    EXPECT_EQ(back[i].prompt_text, render_prompt(problems[i], PromptStyle::PromptedInstruct).text);
  }
}

TEST_F(JsonlTest, BadLineReportsItsOffset) {
  const auto problems = generate_dataset(GenerationSpec{3, 19, 3, 1});
  const std::string text = problems_to_jsonl(problems, PromptStyle::TrainedDirect);
  const std::size_t second = text.find('\n') + 1;
  {
    std::ofstream os(path_, std::ios::binary);
    os << text.substr(0, second) << "{\"id\": broken\n" << text.substr(second);
  }
  try {
    read_problems(path_);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), second);
  }
}

TEST_F(JsonlTest, InconsistentRecordIsRejected) {
  std::string line = problem_to_jsonl(chain_from_results({1, 2, 3}), PromptStyle::TrainedDirect);
  const auto at = line.find("\"addends\":[1,1]");
  ASSERT_NE(at, std::string::npos) << line;
  line.replace(at, 15, "\"addends\":[1,2]");
  {
    std::ofstream os(path_, std::ios::binary);
    os << line;
  }
  EXPECT_THROW(read_problems(path_), FormatError);
}

TEST_F(JsonlTest, MissingFileIsIoError) {
  EXPECT_THROW(read_problems(path_ / "nope"), IoError);
}

}  // namespace
}  // namespace layerlab

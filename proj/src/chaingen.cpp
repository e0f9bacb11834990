// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "layerlab/chaingen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "layerlab/error.hpp"

namespace layerlab {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string direct_question(char var) {
  return std::string("Question: What is the value of ") + var +
         "? You must answer directly with " + var + "=xxx.";
}

std::string step_by_step_question(char var) {
  return std::string("Question: What is the value of ") + var + "? Let's think step by step.";
}

struct NumberToken {
  double value;
  std::size_t end;
};

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Number starting exactly at `pos`: -?\d+(\.\d+)?
std::optional<NumberToken> scan_number(std::string_view s, std::size_t pos) {
  std::size_t i = pos;
  bool negative = false;
  if (i < s.size() && s[i] == '-') {
    negative = true;
    ++i;
  }
  const std::size_t digits_begin = i;
  while (i < s.size() && is_digit(s[i])) ++i;
  if (i == digits_begin) return std::nullopt;
  std::size_t end = i;
  if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
    ++i;
    while (i < s.size() && is_digit(s[i])) ++i;
    end = i;
  }
  const std::string text(s.substr(digits_begin, end - digits_begin));
  const double v = std::strtod(text.c_str(), nullptr);
  return NumberToken{negative ? -v : v, end};
}

std::optional<double> find_answer_number(std::string_view s) {
  for (std::size_t pos = s.find("A="); pos != std::string_view::npos;
       pos = s.find("A=", pos + 1)) {
    std::size_t i = pos + 2;
    while (i < s.size() && s[i] == ' ') ++i;
    if (auto tok = scan_number(s, i)) return tok->value;
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool starts = is_digit(s[i]) || (s[i] == '-' && i + 1 < s.size() && is_digit(s[i + 1]));
    if (!starts) continue;
    if (i > 0) {
      const unsigned char prev = static_cast<unsigned char>(s[i - 1]);
      if (std::isalnum(prev) || prev == '.') continue;
    }
    if (auto tok = scan_number(s, i)) return tok->value;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Format f) {
  switch (f) {
    case Format::Original: return "Original";
    case Format::Reversed: return "Reversed";
    case Format::Scaled: return "Scaled";
  }
  return "?";
}

std::string_view to_string(PromptStyle s) {
  switch (s) {
    case PromptStyle::PromptedInstruct: return "PromptedInstruct";
    case PromptStyle::TrainedDirect: return "TrainedDirect";
    case PromptStyle::ExplicitCoT: return "ExplicitCoT";
  }
  return "?";
}

Format parse_format(std::string_view name) {
  const std::string n = lower(name);
  if (n == "original") return Format::Original;
  if (n == "reversed" || n == "reverse") return Format::Reversed;
  if (n == "scaled" || n == "scale") return Format::Scaled;
  throw ConfigError("unknown format '" + std::string(name) + "'");
}

PromptStyle parse_style(std::string_view name) {
  std::string n = lower(name);
  std::erase_if(n, [](char c) { return c == '_' || c == '-'; });
  if (n == "promptedinstruct") return PromptStyle::PromptedInstruct;
  if (n == "traineddirect") return PromptStyle::TrainedDirect;
  if (n == "explicitcot") return PromptStyle::ExplicitCoT;
  throw ConfigError("unknown prompt style '" + std::string(name) + "'");
}

void GenerationSpec::validate() const {
  if (n_steps < 2 || n_steps > kMaxChainSteps)
    throw ConfigError("n_steps must be in [2, " + std::to_string(kMaxChainSteps) + "], got " +
                      std::to_string(n_steps));
  if (max_value < 1) throw ConfigError("M must be >= 1");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
}

void validate_problem(const ChainProblem& p) {
  const auto n = static_cast<std::size_t>(p.n_steps);
  if (p.n_steps < 1 || p.n_steps > kMaxChainSteps) throw ConfigError("bad n_steps in " + p.id);
  if (p.step_results.size() != n || p.addends.size() != n - 1 || p.var_names.size() != n)
    throw ConfigError("length mismatch in problem " + p.id);
  for (std::size_t i = 0; i < n; ++i) {
    if (p.step_results[i] < 0 || p.step_results[i] > p.max_value)
      throw ConfigError("step result out of [0, M] in problem " + p.id);
    if (i > 0 && p.step_results[i] != p.step_results[i - 1] + p.addends[i - 1])
      throw ConfigError("addend inconsistent with step results in problem " + p.id);
  }
  std::set<char> names(p.var_names.begin(), p.var_names.end());
  if (names.size() != n) throw ConfigError("duplicate variable names in problem " + p.id);
  for (char c : p.var_names) {
    if (c < 'A' || c > 'Z') throw ConfigError("variable names must be capital letters");
  }
}

ChainProblem chain_from_results(std::vector<int> step_results, int max_value) {
  ChainProblem p;
  p.n_steps = static_cast<int>(step_results.size());
  p.max_value = max_value;
  p.step_results = std::move(step_results);
  for (int i = 1; i < p.n_steps; ++i) {
    p.addends.push_back(p.step_results[i] - p.step_results[i - 1]);
  }
  for (int i = 0; i < p.n_steps; ++i) {
    p.var_names.push_back(static_cast<char>('A' + (p.n_steps - 1 - i)));
  }
  validate_problem(p);
  return p;
}

ChainProblem generate_chain(const GenerationSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<int> results(static_cast<std::size_t>(spec.n_steps));
  for (int& r : results) r = uniform_int(rng, 0, spec.max_value);
  return with_format(chain_from_results(std::move(results), spec.max_value), spec.format);
}

int evaluate_chain(const ChainProblem& p) {
  int acc = p.step_results.front();
  for (int a : p.addends) acc += a;
  return acc;
}

ChainProblem apply_reversal(ChainProblem p) {
  p.format = Format::Reversed;
  return p;
}

ChainProblem apply_scaling(ChainProblem p) {
  p.format = Format::Scaled;
  return p;
}

ChainProblem with_format(ChainProblem p, Format f) {
  switch (f) {
    case Format::Original: p.format = Format::Original; return p;
    case Format::Reversed: return apply_reversal(std::move(p));
    case Format::Scaled: return apply_scaling(std::move(p));
  }
  return p;
}

std::string format_value(int value, Format f) {
  if (f != Format::Scaled) return std::to_string(value);
  const int mag = value < 0 ? -value : value;
  std::string out = value < 0 ? "-" : "";
  out += std::to_string(mag / 10);
  out += '.';
  out += static_cast<char>('0' + mag % 10);
  return out;
}

std::vector<std::string> equation_lines(const ChainProblem& p) {
  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(p.n_steps));
  for (int i = 0; i < p.n_steps; ++i) {
    std::string line(1, p.var_names[i]);
    line += " = ";
    if (i == 0) {
      line += format_value(p.step_results[0], p.format);
    } else {
      const int a = p.addends[i - 1];
      line += p.var_names[i - 1];
      line += a < 0 ? " - " : " + ";
      line += format_value(a < 0 ? -a : a, p.format);
    }
    line += " ;";
    lines.push_back(std::move(line));
  }
  if (p.format == Format::Reversed) std::reverse(lines.begin(), lines.end());
  return lines;
}

std::string equation_block(const ChainProblem& p) {
  std::string out;
  for (const auto& line : equation_lines(p)) {
    out += line;
    out += '\n';
  }
  return out;
}

RenderedPrompt render_prompt(const ChainProblem& p, PromptStyle style) {
  const char answer_var = p.var_names.back();
  RenderedPrompt r;
  r.style = style;
  r.problem_id = p.id;
  r.expected_answer_text = format_value(p.answer(), p.format);
  r.text = equation_block(p);
  switch (style) {
    case PromptStyle::PromptedInstruct:
      r.text += '\n';
      r.text += direct_question(answer_var);
      r.text += "\n\nAnswer: ";
      r.text += answer_var;
      r.text += '=';
      break;
    case PromptStyle::TrainedDirect:
      r.text += answer_var;
      r.text += "=?\n</s></s>####";
      break;
    case PromptStyle::ExplicitCoT:
      r.text += '\n';
      r.text += step_by_step_question(answer_var);
      r.text += "\n\nAnswer:";
      break;
    default:
      throw ConfigError("unsupported prompt style");
  }
  return r;
}

ParsedAnswer parse_answer(std::string_view output_text, Format f, int max_value) {
  const auto number = find_answer_number(output_text);
  if (!number) return {ParseStatus::Unparsable, 0};
  const double scaled = f == Format::Scaled ? *number * 10.0 : *number;
  const double rounded = std::round(scaled);
  if (std::abs(scaled - rounded) > 1e-9) return {ParseStatus::NonIntegral, 0};
  if (rounded < 0 || rounded > max_value) return {ParseStatus::OutOfRange, static_cast<int>(rounded)};
  return {ParseStatus::Ok, static_cast<int>(rounded)};
}

std::vector<ChainProblem> generate_dataset(const GenerationSpec& spec) {
  spec.validate();
  if (spec.dedupe) {
    double space = 1.0;
    for (int i = 0; i < spec.n_steps; ++i) space *= spec.max_value + 1;
    if (space < spec.n_samples)
      throw ConfigError("cannot draw " + std::to_string(spec.n_samples) +
                        " distinct problems from a space of " +
                        std::to_string(static_cast<long long>(space)));
  }
  const std::uint64_t max_attempts = 100ULL * static_cast<std::uint64_t>(spec.n_samples);
  std::set<std::vector<int>> seen;
  std::vector<ChainProblem> out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  char id[64];
  for (std::uint64_t attempt = 0; out.size() < static_cast<std::size_t>(spec.n_samples);
       ++attempt) {
    if (attempt >= max_attempts)
      throw ConfigError("dedupe exhausted after " + std::to_string(max_attempts) + " attempts");
    const std::uint64_t seed = derive_seed(spec.seed, {attempt});
    Rng rng(seed);
    ChainProblem p = generate_chain(spec, rng);
    if (spec.dedupe && !seen.insert(p.step_results).second) continue;
    p.seed = seed;
    std::snprintf(id, sizeof(id), "s%d-%s-%05zu", spec.n_steps,
                  lower(to_string(spec.format)).c_str(), out.size());
    p.id = id;
    out.push_back(std::move(p));
  }
  return out;
}

std::string problem_to_jsonl(const ChainProblem& p, PromptStyle style) {
  const RenderedPrompt r = render_prompt(p, style);
  ordered_json j;
  j["id"] = p.id;
  j["n_steps"] = p.n_steps;
  j["M"] = p.max_value;
  j["format"] = to_string(p.format);
  j["step_results"] = p.step_results;
  j["addends"] = p.addends;
  std::vector<std::string> names;
  for (char c : p.var_names) names.emplace_back(1, c);
  j["var_names"] = names;
  j["prompt_text"] = r.text;
  j["style"] = to_string(style);
  j["expected_answer_text"] = r.expected_answer_text;
  j["seed"] = p.seed;
  return j.dump();
}

std::string problems_to_jsonl(const std::vector<ChainProblem>& problems, PromptStyle style) {
  std::string out;
  for (const auto& p : problems) {
    out += problem_to_jsonl(p, style);
    out += '\n';
  }
  return out;
}

void write_problems(const std::filesystem::path& path,
                    const std::vector<ChainProblem>& problems, PromptStyle style) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << problems_to_jsonl(problems, style);
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<ProblemRecord> read_problems(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<ProblemRecord> out;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(is, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ProblemRecord rec;
      ChainProblem& p = rec.problem;
      p.id = j.at("id").get<std::string>();
      p.n_steps = j.at("n_steps").get<int>();
      p.max_value = j.at("M").get<int>();
      p.format = parse_format(j.at("format").get<std::string>());
      p.step_results = j.at("step_results").get<std::vector<int>>();
      p.addends = j.at("addends").get<std::vector<int>>();
      for (const auto& name : j.at("var_names")) {
        const auto s = name.get<std::string>();
        if (s.size() != 1) throw ConfigError("variable names must be single letters");
        p.var_names.push_back(s[0]);
      }
      p.seed = j.value("seed", std::uint64_t{0});
      validate_problem(p);
      rec.style = parse_style(j.at("style").get<std::string>());
      rec.prompt_text = j.at("prompt_text").get<std::string>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what(), line_offset);
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ": " + e.what(), line_offset);
    }
  }
  return out;
}

}  // namespace layerlab

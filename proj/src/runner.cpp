// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "layerlab/runner.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include "layerlab/error.hpp"
#include "layerlab/parallel.hpp"
#include "layerlab/rng.hpp"

namespace layerlab {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Seed stream tags.
enum : std::uint64_t {
  kTagCell = 1,
  kTagSplit = 2,
  kTagProbe = 3,
  kTagTrain = 4,
  kTagInternalize = 5,
  kTagToyInit = 6,
  kTagTrainProblems = 7,
};

constexpr const char* kRunCell = "run";

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = s.find(',');
    const auto item = trim(s.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("not a number: '" + std::string(s) + "'");
  return v;
}

bool parse_bool(std::string_view s) {
  const std::string v = lower(s);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: '" + std::string(s) + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct KeyDef {
  std::string name;
  std::string help;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define LL_INT(key, help, expr)                                                           \
  KeyDef {                                                                                \
    key, help, [](ExperimentConfig& c, std::string_view v) {                              \
      expr = parse_number<std::remove_reference_t<decltype(expr)>>(v);                    \
    },                                                                                    \
        [](const ExperimentConfig& c) { return std::to_string(expr); }                    \
  }
#define LL_REAL(key, help, expr)                                                             \
  KeyDef {                                                                                   \
    key, help, [](ExperimentConfig& c, std::string_view v) { expr = parse_number<double>(v); }, \
        [](const ExperimentConfig& c) { return fmt_double(expr); }                           \
  }
#define LL_BOOL(key, help, expr)                                                       \
  KeyDef {                                                                             \
    key, help, [](ExperimentConfig& c, std::string_view v) { expr = parse_bool(v); },  \
        [](const ExperimentConfig& c) { return std::string(expr ? "true" : "false"); } \
  }
#define LL_TEXT(key, help, expr)                                                      \
  KeyDef {                                                                            \
    key, help, [](ExperimentConfig& c, std::string_view v) { expr = std::string(v); }, \
        [](const ExperimentConfig& c) { return std::string(expr); }                   \
  }

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      LL_INT("seed", "global seed; every other seed is derived from it", c.seed),
      {"steps", "comma-separated chain lengths of the grid",
       [](ExperimentConfig& c, std::string_view v) {
         c.steps.clear();
         for (const auto& s : split_list(v)) c.steps.push_back(parse_number<int>(s));
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (int s : c.steps) items.push_back(std::to_string(s));
         return join(items);
       }},
      {"formats", "comma-separated formats of the grid: original, reversed, scaled",
       [](ExperimentConfig& c, std::string_view v) {
         c.formats.clear();
         for (const auto& s : split_list(v)) c.formats.push_back(parse_format(s));
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (Format f : c.formats) items.push_back(lower(to_string(f)));
         return join(items);
       }},
      {"cells", "optional subset of the grid, e.g. 3:original,5:scaled",
       [](ExperimentConfig& c, std::string_view v) {
         c.only_cells.clear();
         for (const auto& s : split_list(v)) c.only_cells.push_back(parse_cell(s));
       },
       [](const ExperimentConfig& c) {
         std::vector<std::string> items;
         for (const auto& cell : c.only_cells)
           items.push_back(std::to_string(cell.n_steps) + ":" + lower(to_string(cell.format)));
         return join(items);
       }},
      LL_INT("max_value", "largest step result M; probes have M + 1 classes", c.max_value),
      LL_INT("n_samples", "problems per cell", c.n_samples),
      LL_INT("n_train", "probe training samples per cell", c.n_train),
      LL_INT("n_test", "probe test samples per cell", c.n_test),
      {"style", "prompt style: trained_direct, prompted_instruct, explicit_cot",
       [](ExperimentConfig& c, std::string_view v) { c.style = parse_style(v); },
       [](const ExperimentConfig& c) { return lower(to_string(c.style)); }},
      {"subject", "toy or dump",
       [](ExperimentConfig& c, std::string_view v) {
         const std::string s = lower(v);
         if (s == "toy") {
           c.subject = SubjectKind::ToyModel;
         } else if (s == "dump") {
           c.subject = SubjectKind::ExternalDump;
         } else {
           throw ConfigError("subject must be toy or dump, got '" + std::string(v) + "'");
         }
       },
       [](const ExperimentConfig& c) {
         return std::string(c.subject == SubjectKind::ToyModel ? "toy" : "dump");
       }},
      LL_TEXT("subject_label", "row label in the answer grid", c.subject_label),
      {"checkpoint", "toy checkpoint; empty trains one inside the run",
       [](ExperimentConfig& c, std::string_view v) { c.checkpoint = std::string(v); },
       [](const ExperimentConfig& c) { return c.checkpoint.string(); }},
      LL_TEXT("dump", "LLAD path pattern with {cell}, {steps}, {format}", c.dump_pattern),
      LL_TEXT("answers", "completions JSONL path pattern for dump subjects", c.answers_pattern),
      LL_BOOL("average_pairs", "average consecutive layer pairs before probing", c.average_pairs),
      LL_INT("probe.epochs", "probe epochs", c.probe.epochs),
      LL_INT("probe.batch_size", "probe mini-batch size", c.probe.batch_size),
      LL_REAL("probe.learning_rate", "probe SGD step size", c.probe.learning_rate),
      LL_BOOL("probe.standardize", "standardize probe features", c.probe.standardize),
      LL_REAL("onset.threshold", "onset accuracy threshold", c.onset_threshold),
      LL_INT("onset.persistence", "onset run length in layers", c.onset_persistence),
      LL_INT("toy.n_layers", "toy transformer blocks", c.toy.n_layers),
      LL_INT("toy.d_model", "toy residual width", c.toy.d_model),
      LL_INT("toy.n_heads", "toy attention heads", c.toy.n_heads),
      LL_INT("toy.ff_dim", "toy feed-forward width", c.toy.ff_dim),
      LL_INT("toy.context_len", "toy context length in tokens", c.toy.context_len),
      LL_INT("train.steps", "chain length the toy is trained on", c.train_steps),
      LL_INT("train.problems", "training problems", c.train_problems),
      LL_INT("train.epochs", "explicit-CoT epochs", c.train.epochs),
      LL_INT("train.batch_size", "toy mini-batch size", c.train.batch_size),
      LL_REAL("train.learning_rate", "toy peak learning rate", c.train.learning_rate),
      LL_REAL("train.min_lr_ratio", "cosine floor relative to the peak", c.train.min_lr_ratio),
      LL_INT("train.warmup_steps", "linear warmup steps", c.train.warmup_steps),
      LL_REAL("train.weight_decay", "decoupled weight decay", c.train.weight_decay),
      LL_REAL("train.grad_clip", "global gradient-norm clip, 0 disables", c.train.grad_clip),
      LL_BOOL("internalize", "run the step-removal curriculum after explicit training",
              c.internalize),
      LL_INT("internalize.epochs", "epochs per curriculum stage", c.internalize_hyper.epochs),
      LL_REAL("internalize.learning_rate", "peak learning rate per stage",
              c.internalize_hyper.learning_rate),
      LL_INT("internalize.warmup_steps", "warmup steps per stage",
             c.internalize_hyper.warmup_steps),
      LL_INT("cell_workers", "grid cells processed concurrently", c.cell_workers),
      {"out", "run directory",
       [](ExperimentConfig& c, std::string_view v) { c.out_dir = std::string(v); },
       [](const ExperimentConfig& c) { return c.out_dir.string(); }},
  };
  return defs;
}

#undef LL_INT
#undef LL_REAL
#undef LL_BOOL
#undef LL_TEXT

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

std::string substitute(std::string pattern, const CellSpec& cell) {
  const std::pair<std::string, std::string> subs[] = {
      {"{cell}", cell.label()},
      {"{steps}", std::to_string(cell.n_steps)},
      {"{format}", lower(to_string(cell.format))},
  };
  for (const auto& [key, value] : subs) {
    for (auto at = pattern.find(key); at != std::string::npos; at = pattern.find(key, at)) {
      pattern.replace(at, key.size(), value);
      at += value.size();
    }
  }
  return pattern;
}

std::string subject_name(const ExperimentConfig& c) {
  if (!c.subject_label.empty()) return c.subject_label;
  return c.subject == SubjectKind::ToyModel ? "toy" : "dump";
}

fs::path toy_dir(const ExperimentConfig& c) { return c.out_dir / "toy"; }

fs::path resolve_checkpoint(const ExperimentConfig& c) {
  if (!c.checkpoint.empty()) return c.checkpoint;
  return toy_dir(c) / (c.internalize ? "internalized.llck" : "explicit.llck");
}

fs::path problems_path(const ExperimentConfig& c, const CellSpec& cell) {
  return c.out_dir / "problems" / (cell.label() + ".jsonl");
}
fs::path activations_path(const ExperimentConfig& c, const CellSpec& cell) {
  if (c.subject == SubjectKind::ExternalDump) return substitute(c.dump_pattern, cell);
  return c.out_dir / "activations" / (cell.label() + ".llad");
}
fs::path answers_text_path(const ExperimentConfig& c, const CellSpec& cell) {
  if (c.subject == SubjectKind::ExternalDump) return substitute(c.answers_pattern, cell);
  return c.out_dir / "answers" / (cell.label() + ".jsonl");
}
fs::path answers_score_path(const ExperimentConfig& c, const CellSpec& cell) {
  return c.out_dir / "answers" / (cell.label() + ".json");
}
fs::path probe_csv_path(const ExperimentConfig& c, const CellSpec& cell) {
  return c.out_dir / "probes" / (cell.label() + ".csv");
}
fs::path probe_json_path(const ExperimentConfig& c, const CellSpec& cell) {
  return c.out_dir / "probes" / (cell.label() + ".json");
}

std::string json_line(const ojson& j) { return j.dump() + "\n"; }

// Runs one stage, recording its outcome. Returns false on failure.
bool run_stage(RunManifest& manifest, const std::string& cell, const std::string& stage,
               const std::function<void()>& fn) {
  StageStatus status;
  status.stage = stage;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
    status.ok = true;
  } catch (const std::exception& e) {
    status.error = e.what();
    std::fprintf(stderr, "[runner] %s: %s failed: %s\n", cell.c_str(), stage.c_str(), e.what());
  }
  status.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.record_stage(cell, status);
  return status.ok;
}

RunManifest open_manifest(const ExperimentConfig& config) {
  RunManifest manifest = fs::exists(config.out_dir / "manifest.json")
                             ? RunManifest::load(config.out_dir)
                             : RunManifest(config.out_dir);
  manifest.set_config(config);
  return manifest;
}

ojson accuracy_json(const AnswerAccuracy& acc) {
  const Interval ci = wilson_interval(acc.n_correct, acc.n);
  ojson j;
  j["accuracy"] = acc.accuracy;
  j["n"] = acc.n;
  j["n_correct"] = acc.n_correct;
  j["n_unparsable"] = acc.n_unparsable;
  j["ci95"] = {ci.lo, ci.hi};
  return j;
}

// Stage bodies. Each one writes its outputs and registers them.

void stage_gen(const ExperimentConfig& config, RunManifest& manifest, const CellSpec& cell) {
  const auto problems = cell_problems(config, cell);
  const fs::path path = problems_path(config, cell);
  fs::create_directories(path.parent_path());
  write_problems(path, problems, config.style);
  manifest.add_artifact(path, cell.label(), "problems");
}

void stage_extract(const ExperimentConfig& config, RunManifest& manifest, const CellSpec& cell,
                   const ToyModel* model) {
  const auto problems = cell_problems(config, cell);
  if (config.subject == SubjectKind::ToyModel) {
    if (model == nullptr) throw ConfigError("no toy model loaded");
    const ActivationSet set = export_activations(*model, problems, config.style);
    const fs::path path = activations_path(config, cell);
    fs::create_directories(path.parent_path());
    write_activations(set, path);
    manifest.add_artifact(path, cell.label(), "activations");
  } else {
    const fs::path path = activations_path(config, cell);
    const ActivationSet set = read_activations(path);
    check_dump(set, cell, config);
    manifest.add_artifact(path, cell.label(), "dump");
  }
}

void stage_answers(const ExperimentConfig& config, RunManifest& manifest, const CellSpec& cell,
                   const ToyModel* model) {
  const auto problems = cell_problems(config, cell);
  AnswerAccuracy acc;
  if (config.subject == SubjectKind::ToyModel) {
    if (model == nullptr) throw ConfigError("no toy model loaded");
    acc = answer_accuracy(*model, problems, config.style);
    std::string text;
    for (const auto& s : acc.samples) text += json_line({{"id", s.problem_id}, {"text", s.output}});
    const fs::path path = answers_text_path(config, cell);
    write_text(path, text);
    manifest.add_artifact(path, cell.label(), "answers");
  } else {
    const fs::path path = answers_text_path(config, cell);
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::map<std::string, std::string> by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        by_id[j.at("id").get<std::string>()] = j.at("text").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    std::vector<std::string> outputs;
    for (const auto& p : problems) {
      const auto it = by_id.find(p.id);
      if (it == by_id.end()) throw ShapeError(path.string() + " has no completion for " + p.id);
      outputs.push_back(it->second);
    }
    acc = score_outputs(problems, outputs);
    manifest.add_artifact(path, cell.label(), "answers");
  }
  ojson j;
  j["cell"] = cell.label();
  j["subject"] = subject_name(config);
  j["style"] = std::string(to_string(config.style));
  j["answer"] = accuracy_json(acc);
  const fs::path score = answers_score_path(config, cell);
  write_text(score, j.dump(2) + "\n");
  manifest.add_artifact(score, cell.label(), "answer_score");
}

void stage_probe(const ExperimentConfig& config, RunManifest& manifest, const CellSpec& cell) {
  ActivationSet set = read_activations(activations_path(config, cell));
  if (config.subject == SubjectKind::ExternalDump) check_dump(set, cell, config);
  if (config.average_pairs) set = average_layer_pairs(set);
  const SplitIndex split = split_train_test(set, config.n_train, config.n_test, split_seed(config, cell));
  ProbeTrainConfig probe = config.probe;
  probe.seed = cell_probe_seed(config, cell);
  const AccuracyMatrix matrix = probe_all(set, split, probe);
  const OnsetReport onsets = onset_layers(matrix, config.onset_threshold, config.onset_persistence);

  const fs::path csv = probe_csv_path(config, cell);
  write_text(csv, matrix.to_csv());
  manifest.add_artifact(csv, cell.label(), "accuracy_matrix");

  ojson j;
  j["cell"] = cell.label();
  j["n_steps"] = cell.n_steps;
  j["format"] = std::string(to_string(cell.format));
  j["subject"] = subject_name(config);
  j["style"] = std::string(to_string(config.style));
  j["source_tag"] = set.source_tag();
  j["averaged_pairs"] = config.average_pairs;
  j["probe"] = probe_report(matrix, onsets, probe, split);
  const fs::path json = probe_json_path(config, cell);
  write_text(json, j.dump(2) + "\n");
  manifest.add_artifact(json, cell.label(), "probe_report");
}

bool train_in_run(const ExperimentConfig& config, RunManifest& manifest) {
  return run_stage(manifest, kRunCell, "train_explicit", [&] {
    const auto problems = training_problems(config);
    ToyConfig toy = config.toy;
    toy.seed = derive_seed(config.seed, {kTagToyInit});
    TrainHyperparams hyper = config.train;
    hyper.seed = train_seed(config);
    const ToyModel model = train_explicit(toy, problems, hyper);
    const fs::path path = toy_dir(config) / "explicit.llck";
    fs::create_directories(path.parent_path());
    save_checkpoint(model, path);
    manifest.add_artifact(path, "", "checkpoint");
  });
}

bool internalize_in_run(const ExperimentConfig& config, RunManifest& manifest) {
  return run_stage(manifest, kRunCell, "internalize", [&] {
    const fs::path source =
        config.checkpoint.empty() ? toy_dir(config) / "explicit.llck" : config.checkpoint;
    const ToyModel model = load_checkpoint(source);
    const auto problems = training_problems(config);
    TrainHyperparams hyper = config.internalize_hyper;
    hyper.seed = derive_seed(config.seed, {kTagInternalize});
    auto curriculum = make_curriculum(config.train_steps, hyper);
    curriculum.erase(curriculum.begin());  // stage 0 is the explicit run itself
    const InternalizeResult result = internalize(model, problems, curriculum);
    fs::create_directories(toy_dir(config));
    for (std::size_t i = 0; i < result.stage_checkpoints.size(); ++i) {
      const fs::path path =
          toy_dir(config) / ("stage" + std::to_string(curriculum[i].stage_index) + ".llck");
      save_checkpoint(result.stage_checkpoints[i], path);
      manifest.add_artifact(path, "", "checkpoint");
    }
    const fs::path path = toy_dir(config) / "internalized.llck";
    save_checkpoint(result.model, path);
    manifest.add_artifact(path, "", "checkpoint");
  });
}

// Runs `stages` for every cell, isolating failures. Returns true if every
// cell succeeded.
bool run_cells(const ExperimentConfig& config, RunManifest& manifest,
               const std::function<bool(const CellSpec&)>& body) {
  const auto cells = config.cells();
  std::vector<char> ok(cells.size(), 0);
  parallel_for(cells.size(), config.cell_workers, [&](std::size_t i) {
    const bool good = body(cells[i]);
    manifest.set_cell_state(cells[i].label(), good ? "ok" : "failed");
    ok[i] = good ? 1 : 0;
  });
  return std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
}

std::optional<ToyModel> load_subject(const ExperimentConfig& config, RunManifest& manifest) {
  if (config.subject != SubjectKind::ToyModel) return std::nullopt;
  std::optional<ToyModel> model;
  run_stage(manifest, kRunCell, "load_checkpoint",
            [&] { model = load_checkpoint(resolve_checkpoint(config)); });
  return model;
}

}  // namespace

std::string CellSpec::label() const {
  return "s" + std::to_string(n_steps) + "-" + lower(to_string(format));
}

CellSpec parse_cell(std::string_view text) {
  const std::string t = lower(trim(text));
  CellSpec cell;
  std::string steps, format;
  if (const auto colon = t.find(':'); colon != std::string::npos) {
    steps = t.substr(0, colon);
    format = t.substr(colon + 1);
  } else if (t.size() > 1 && t[0] == 's' && t.find('-') != std::string::npos) {
    const auto dash = t.find('-');
    steps = t.substr(1, dash - 1);
    format = t.substr(dash + 1);
  } else {
    throw ConfigError("cell must look like <steps>:<format>, got '" + std::string(text) + "'");
  }
  cell.n_steps = parse_number<int>(trim(steps));
  cell.format = parse_format(trim(format));
  return cell;
}

ExperimentConfig::ExperimentConfig() {
  train.epochs = 15;
  train.learning_rate = 2e-3;
  internalize_hyper = train;
  internalize_hyper.epochs = 5;
}

void ExperimentConfig::validate() const {
  if (steps.empty() || formats.empty()) throw ConfigError("the step/format grid is empty");
  for (int s : steps) {
    if (s < 2 || s > kMaxChainSteps) throw ConfigError("steps must be in [2, 10]");
  }
  if (max_value < 1) throw ConfigError("max_value must be >= 1");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (n_train + n_test > static_cast<std::size_t>(n_samples))
    throw ConfigError("n_train + n_test exceeds n_samples");
  if (onset_persistence < 1) throw ConfigError("onset.persistence must be >= 1");
  if (!(onset_threshold > 0 && onset_threshold <= 1))
    throw ConfigError("onset.threshold must be in (0, 1]");
  if (cell_workers < 1) throw ConfigError("cell_workers must be >= 1");
  probe.validate();
  if (subject == SubjectKind::ToyModel) {
    if (style != PromptStyle::TrainedDirect)
      throw ConfigError("the toy subject only reads TrainedDirect prompts");
    toy.validate();
    train.validate();
    if (internalize) internalize_hyper.validate();
    if (train_steps < 2 || train_steps > kMaxChainSteps)
      throw ConfigError("train.steps must be in [2, 10]");
    if (train_problems < 1) throw ConfigError("train.problems must be >= 1");
  } else if (dump_pattern.empty()) {
    throw ConfigError("a dump subject needs a dump path pattern");
  }
  for (const auto& c : only_cells) {
    if (std::find(steps.begin(), steps.end(), c.n_steps) == steps.end() ||
        std::find(formats.begin(), formats.end(), c.format) == formats.end())
      throw ConfigError("cell " + c.label() + " is not in the grid");
  }
}

std::vector<CellSpec> ExperimentConfig::cells() const {
  std::vector<CellSpec> out;
  for (int s : steps) {
    for (Format f : formats) {
      const CellSpec cell{s, f};
      if (!only_cells.empty() &&
          std::find(only_cells.begin(), only_cells.end(), cell) == only_cells.end())
        continue;
      if (std::find(out.begin(), out.end(), cell) == out.end()) out.push_back(cell);
    }
  }
  return out;
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& d : key_defs()) out.emplace_back(d.name, d.help);
    return out;
  }();
  return keys;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream is{std::string(text)};
  std::string raw;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const auto& defs = key_defs();
    const auto it = std::find_if(defs.begin(), defs.end(), [&](const KeyDef& d) { return d.name == key; });
    if (it == defs.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

std::string to_config_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& d : key_defs()) out += d.name + " = " + d.get(config) + "\n";
  return out;
}

std::uint64_t cell_seed(const ExperimentConfig& config, const CellSpec& cell) {
  return derive_seed(config.seed, {kTagCell, static_cast<std::uint64_t>(cell.n_steps),
                                   static_cast<std::uint64_t>(cell.format)});
}
std::uint64_t split_seed(const ExperimentConfig& config, const CellSpec& cell) {
  return derive_seed(config.seed, {kTagSplit, static_cast<std::uint64_t>(cell.n_steps),
                                   static_cast<std::uint64_t>(cell.format)});
}
std::uint64_t cell_probe_seed(const ExperimentConfig& config, const CellSpec& cell) {
  return derive_seed(config.seed, {kTagProbe, static_cast<std::uint64_t>(cell.n_steps),
                                   static_cast<std::uint64_t>(cell.format)});
}
std::uint64_t train_seed(const ExperimentConfig& config) {
  return derive_seed(config.seed, {kTagTrain});
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  const std::string text = read_text(path);
  return sha256_hex(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

RunManifest::RunManifest(fs::path run_dir) : run_dir_(std::move(run_dir)), created_(utc_now()) {
  updated_ = created_;
}

RunManifest::RunManifest(RunManifest&& other) noexcept { *this = std::move(other); }

RunManifest& RunManifest::operator=(RunManifest&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  run_dir_ = std::move(other.run_dir_);
  config_text_ = std::move(other.config_text_);
  config_hash_ = std::move(other.config_hash_);
  created_ = std::move(other.created_);
  updated_ = std::move(other.updated_);
  artifacts_ = std::move(other.artifacts_);
  cells_ = std::move(other.cells_);
  return *this;
}

void RunManifest::set_config(const ExperimentConfig& config) {
  std::string text = to_config_text(config);
  // The run directory does not change what is computed.
  std::string hashed;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("out =", 0) != 0) hashed += line + "\n";
  }
  const std::string hash =
      sha256_hex(std::span(reinterpret_cast<const unsigned char*>(hashed.data()), hashed.size()));
  std::lock_guard<std::mutex> lock(mu_);
  if (!config_hash_.empty() && config_hash_ != hash)
    std::fprintf(stderr, "[runner] warning: %s was produced under a different config\n",
                 run_dir_.string().c_str());
  config_text_ = std::move(text);
  config_hash_ = hash;
}

void RunManifest::add_artifact(const fs::path& file, const std::string& cell,
                               const std::string& kind) {
  ArtifactRecord rec;
  const fs::path rel = file.lexically_relative(run_dir_);
  rec.path = !rel.empty() && rel.native()[0] != '.' ? rel.generic_string() : file.generic_string();
  rec.sha256 = sha256_file(file);
  rec.bytes = fs::file_size(file);
  rec.cell = cell;
  rec.kind = kind;
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = std::find_if(artifacts_.begin(), artifacts_.end(),
                               [&](const ArtifactRecord& a) { return a.path == rec.path; });
  if (it != artifacts_.end()) {
    *it = std::move(rec);
  } else {
    artifacts_.push_back(std::move(rec));
  }
  std::sort(artifacts_.begin(), artifacts_.end(),
            [](const ArtifactRecord& a, const ArtifactRecord& b) { return a.path < b.path; });
  updated_ = utc_now();
}

void RunManifest::record_stage(const std::string& cell, StageStatus status) {
  std::lock_guard<std::mutex> lock(mu_);
  CellStatus& c = cells_[cell];
  c.label = cell;
  auto it = std::find_if(c.stages.begin(), c.stages.end(),
                         [&](const StageStatus& s) { return s.stage == status.stage; });
  if (it != c.stages.end()) {
    *it = std::move(status);
  } else {
    c.stages.push_back(std::move(status));
  }
  updated_ = utc_now();
}

void RunManifest::set_cell_state(const std::string& cell, const std::string& state) {
  std::lock_guard<std::mutex> lock(mu_);
  CellStatus& c = cells_[cell];
  c.label = cell;
  c.state = state;
  updated_ = utc_now();
}

std::vector<ArtifactRecord> RunManifest::artifacts() const {
  std::lock_guard<std::mutex> lock(mu_);
  return artifacts_;
}

std::map<std::string, CellStatus> RunManifest::cells() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cells_;
}

std::string RunManifest::config_hash() const {
  std::lock_guard<std::mutex> lock(mu_);
  return config_hash_;
}

std::string RunManifest::config_text() const {
  std::lock_guard<std::mutex> lock(mu_);
  return config_text_;
}

ojson RunManifest::to_json() const {
  std::lock_guard<std::mutex> lock(mu_);
  ojson j;
  j["format"] = "layerlab-run";
  j["version"] = 1;
  j["layerlab_version"] = std::string(kLayerlabVersion);
  j["created"] = created_;
  j["updated"] = updated_;
  j["config_hash"] = config_hash_;
  j["config"] = config_text_;
  ojson cells = ojson::object();
  for (const auto& [label, c] : cells_) {
    ojson stages = ojson::array();
    for (const auto& s : c.stages) {
      stages.push_back({{"stage", s.stage}, {"ok", s.ok}, {"error", s.error}, {"seconds", s.seconds}});
    }
    cells[label] = {{"state", c.state}, {"stages", stages}};
  }
  j["cells"] = cells;
  ojson arts = ojson::array();
  for (const auto& a : artifacts_) {
    arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes},
                    {"cell", a.cell}, {"kind", a.kind}});
  }
  j["artifacts"] = arts;
  return j;
}

void RunManifest::save() const {
  fs::create_directories(run_dir_);
  write_text(run_dir_ / "manifest.json", to_json().dump(2) + "\n");
}

RunManifest RunManifest::load(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  RunManifest m(run_dir);
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    if (j.at("format").get<std::string>() != "layerlab-run")
      throw FormatError("not a run manifest", 0);
    m.created_ = j.at("created").get<std::string>();
    m.updated_ = j.at("updated").get<std::string>();
    m.config_hash_ = j.at("config_hash").get<std::string>();
    m.config_text_ = j.at("config").get<std::string>();
    for (const auto& [label, c] : j.at("cells").items()) {
      CellStatus cs;
      cs.label = label;
      cs.state = c.at("state").get<std::string>();
      for (const auto& s : c.at("stages")) {
        cs.stages.push_back({s.at("stage").get<std::string>(), s.at("ok").get<bool>(),
                             s.at("error").get<std::string>(), s.at("seconds").get<double>()});
      }
      m.cells_[label] = std::move(cs);
    }
    for (const auto& a : j.at("artifacts")) {
      m.artifacts_.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                              a.at("bytes").get<std::uint64_t>(), a.at("cell").get<std::string>(),
                              a.at("kind").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
  return m;
}

std::vector<ChainProblem> cell_problems(const ExperimentConfig& config, const CellSpec& cell) {
  GenerationSpec spec;
  spec.n_steps = cell.n_steps;
  spec.max_value = config.max_value;
  spec.n_samples = config.n_samples;
  spec.seed = cell_seed(config, cell);
  spec.format = cell.format;
  return generate_dataset(spec);
}

std::vector<ChainProblem> training_problems(const ExperimentConfig& config) {
  std::set<std::vector<int>> excluded;
  for (const auto& cell : config.cells()) {
    if (cell.n_steps != config.train_steps || cell.format != Format::Original) continue;
    for (const auto& p : cell_problems(config, cell)) excluded.insert(p.step_results);
  }
  const double space = std::pow(static_cast<double>(config.max_value + 1), config.train_steps);
  const double wanted = static_cast<double>(config.train_problems) + static_cast<double>(excluded.size());
  if (static_cast<double>(config.train_problems) > space - static_cast<double>(excluded.size()))
    throw ConfigError("only " + std::to_string(static_cast<long long>(space) - static_cast<long long>(excluded.size())) +
                      " training problems remain after holding out the evaluation cells, " +
                      std::to_string(config.train_problems) + " requested");
  GenerationSpec spec;
  spec.n_steps = config.train_steps;
  spec.max_value = config.max_value;
  spec.n_samples = static_cast<int>(std::min(space, wanted));
  spec.seed = derive_seed(config.seed, {kTagTrainProblems});
  spec.format = Format::Original;
  std::vector<ChainProblem> out;
  for (auto& p : generate_dataset(spec)) {
    if (static_cast<int>(out.size()) == config.train_problems) break;
    if (!excluded.contains(p.step_results)) out.push_back(std::move(p));
  }
  return out;
}

void check_dump(const ActivationSet& set, const CellSpec& cell, const ExperimentConfig& config) {
  set.validate();
  if (set.n_samples() < config.n_train + config.n_test)
    throw ShapeError("dump for " + cell.label() + " has " + std::to_string(set.n_samples()) +
                     " samples, the split needs " + std::to_string(config.n_train + config.n_test));
  const auto problems = cell_problems(config, cell);
  std::map<std::string, const ChainProblem*> by_id;
  for (const auto& p : problems) by_id[p.id] = &p;
  for (std::size_t i = 0; i < set.n_samples(); ++i) {
    const SampleMeta& m = set.meta()[i];
    if (m.step_results.size() != static_cast<std::size_t>(cell.n_steps))
      throw ShapeError("dump sample " + std::to_string(i) + " has " +
                       std::to_string(m.step_results.size()) + " step labels, cell " +
                       cell.label() + " expects " + std::to_string(cell.n_steps));
    if (m.format != cell.format)
      throw ShapeError("dump sample " + std::to_string(i) + " is " +
                       std::string(to_string(m.format)) + ", cell " + cell.label() + " expects " +
                       std::string(to_string(cell.format)));
    if (m.max_value != config.max_value)
      throw ShapeError("dump sample " + std::to_string(i) + " has M = " +
                       std::to_string(m.max_value) + ", config has " +
                       std::to_string(config.max_value));
    const auto it = by_id.find(m.problem_id);
    if (it == by_id.end() || it->second->step_results != m.step_results)
      throw ShapeError("dump sample " + std::to_string(i) + " (" + m.problem_id +
                       ") does not match the cell's generated problems");
  }
}

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half), successes >= n ? 1.0 : std::min(1.0, centre + half)};
}

const std::vector<ReferenceRow>& published_reference_rows() {
  static const std::vector<ReferenceRow> rows = {
      {"Mistral (trained)", 3, 78.2, 13.7, 10.0}, {"Mistral (trained)", 4, 31.9, 4.7, 15.2},
      {"Mistral (trained)", 5, 4.8, 1.8, 5.4},    {"Qwen (prompted)", 3, 99.8, 89.0, 90.1},
      {"Qwen (prompted)", 4, 83.2, 41.9, 80.5},   {"Qwen (prompted)", 5, 65.2, 14.9, 59.1},
  };
  return rows;
}

int cmd_gen(const ExperimentConfig& config) {
  config.validate();
  RunManifest manifest = open_manifest(config);
  const bool ok = run_cells(config, manifest, [&](const CellSpec& cell) {
    return run_stage(manifest, cell.label(), "gen", [&] { stage_gen(config, manifest, cell); });
  });
  manifest.save();
  return ok ? 0 : 1;
}

int cmd_train_toy(const ExperimentConfig& config) {
  config.validate();
  if (config.subject != SubjectKind::ToyModel) throw ConfigError("train-toy needs the toy subject");
  RunManifest manifest = open_manifest(config);
  const bool ok = train_in_run(config, manifest);
  manifest.set_cell_state(kRunCell, ok ? "ok" : "failed");
  manifest.save();
  return ok ? 0 : 1;
}

int cmd_internalize(const ExperimentConfig& config) {
  config.validate();
  if (config.subject != SubjectKind::ToyModel) throw ConfigError("internalize needs the toy subject");
  RunManifest manifest = open_manifest(config);
  const bool ok = internalize_in_run(config, manifest);
  manifest.set_cell_state(kRunCell, ok ? "ok" : "failed");
  manifest.save();
  return ok ? 0 : 1;
}

int cmd_extract(const ExperimentConfig& config) {
  config.validate();
  RunManifest manifest = open_manifest(config);
  const auto model = load_subject(config, manifest);
  const ToyModel* subject = model ? &*model : nullptr;
  const bool ok = run_cells(config, manifest, [&](const CellSpec& cell) {
    bool good =
        run_stage(manifest, cell.label(), "extract", [&] { stage_extract(config, manifest, cell, subject); });
    if (good && (config.subject == SubjectKind::ToyModel || !config.answers_pattern.empty())) {
      good = run_stage(manifest, cell.label(), "answers",
                       [&] { stage_answers(config, manifest, cell, subject); });
    }
    return good;
  });
  manifest.save();
  return ok ? 0 : 1;
}

int cmd_probe(const ExperimentConfig& config) {
  config.validate();
  RunManifest manifest = open_manifest(config);
  const bool ok = run_cells(config, manifest, [&](const CellSpec& cell) {
    return run_stage(manifest, cell.label(), "probe", [&] { stage_probe(config, manifest, cell); });
  });
  manifest.save();
  return ok ? 0 : 1;
}

int cmd_report(const fs::path& run_dir) {
  ojson report;
  ojson warnings = ojson::array();
  std::optional<RunManifest> manifest;
  std::optional<ExperimentConfig> config;
  if (fs::exists(run_dir / "manifest.json")) {
    manifest = RunManifest::load(run_dir);
    config = parse_config(manifest->config_text());
    config->out_dir = run_dir;
  } else {
    warnings.push_back("no manifest.json in " + run_dir.string());
  }

  const fs::path report_dir = run_dir / "report";
  fs::create_directories(report_dir / "curves");
  const std::vector<Format> all_formats = {Format::Original, Format::Reversed, Format::Scaled};

  ojson cells = ojson::array();
  // answers[steps][format] = (n_correct, n)
  std::map<int, std::map<Format, std::pair<std::size_t, std::size_t>>> answers;
  std::set<int> grid_steps;
  bool complete = true;
  if (config) {
    ExperimentConfig& cfg = *config;
    for (int s : cfg.steps) grid_steps.insert(s);
    const auto states = manifest->cells();
    for (const auto& cell : cfg.cells()) {
      ojson c;
      c["cell"] = cell.label();
      c["n_steps"] = cell.n_steps;
      c["format"] = std::string(to_string(cell.format));
      c["subject"] = subject_name(cfg);
      c["style"] = std::string(to_string(cfg.style));
      const auto st = states.find(cell.label());
      c["status"] = st == states.end() ? "missing" : st->second.state;
      if (st != states.end() && st->second.state != "ok") {
        complete = false;
        for (const auto& stage : st->second.stages) {
          if (!stage.ok) warnings.push_back(cell.label() + ": stage " + stage.stage + " failed: " + stage.error);
        }
      }
      const fs::path probe_json = probe_json_path(cfg, cell);
      if (fs::exists(probe_json)) {
        const auto pj = ojson::parse(read_text(probe_json));
        const auto& probe = pj.at("probe");
        AccuracyMatrix m;
        m.n_layers = probe.at("n_layers").get<std::size_t>();
        m.n_steps = probe.at("n_steps").get<std::size_t>();
        m.step_labels = probe.at("step_labels").get<std::vector<std::string>>();
        for (const auto& row : probe.at("accuracy")) {
          for (const auto& v : row) m.values.push_back(v.get<double>());
        }
        const fs::path curve = report_dir / "curves" / (cell.label() + ".csv");
        write_text(curve, m.to_csv());
        c["curve"] = "curves/" + cell.label() + ".csv";
        c["source_tag"] = pj.at("source_tag");
        c["probe_accuracy"] = probe.at("accuracy");
        c["onsets"] = probe.at("onsets");
        c["n_train"] = probe.at("n_train");
        c["n_test"] = probe.at("n_test");
      } else {
        complete = false;
        warnings.push_back(cell.label() + ": no probe results (" + probe_json.string() + ")");
      }
      const fs::path score = answers_score_path(cfg, cell);
      if (fs::exists(score)) {
        const auto aj = ojson::parse(read_text(score));
        c["answer"] = aj.at("answer");
        answers[cell.n_steps][cell.format] = {aj.at("answer").at("n_correct").get<std::size_t>(),
                                              aj.at("answer").at("n").get<std::size_t>()};
      } else {
        warnings.push_back(cell.label() + ": no answer accuracy");
        if (cfg.subject == SubjectKind::ToyModel) complete = false;
      }
      cells.push_back(c);
    }
  }

  // Answer grid, rows = subject x steps, columns = the three formats, in percent.
  const std::string subject = config ? subject_name(*config) : "";
  std::string grid_csv = "subject,steps,original,reversed,scaled\n";
  ojson grid = ojson::array();
  char buf[64];
  for (int s : grid_steps) {
    grid_csv += subject + "," + std::to_string(s);
    ojson row;
    row["subject"] = subject;
    row["steps"] = s;
    for (Format f : all_formats) {
      const std::string key = lower(to_string(f));
      const auto it = answers[s].find(f);
      if (it == answers[s].end()) {
        grid_csv += ",";
        row[key] = nullptr;
        continue;
      }
      const auto [k, n] = it->second;
      const double pct = n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0;
      std::snprintf(buf, sizeof(buf), ",%.1f", pct);
      grid_csv += buf;
      const Interval ci = wilson_interval(k, n);
      row[key] = {{"percent", pct}, {"n", n}, {"ci95_percent", {100 * ci.lo, 100 * ci.hi}}};
    }
    grid_csv += "\n";
    grid.push_back(row);
  }
  write_text(report_dir / "answer_grid.csv", grid_csv);

  // Reversed vs Original, reported only.
  ojson fragility = ojson::array();
  for (int s : grid_steps) {
    const auto o = answers[s].find(Format::Original);
    const auto r = answers[s].find(Format::Reversed);
    if (o == answers[s].end() || r == answers[s].end()) continue;
    const double po = o->second.second ? static_cast<double>(o->second.first) / o->second.second : 0;
    const double pr = r->second.second ? static_cast<double>(r->second.first) / r->second.second : 0;
    const Interval co = wilson_interval(o->second.first, o->second.second);
    const Interval cr = wilson_interval(r->second.first, r->second.second);
    fragility.push_back({{"steps", s},
                         {"original", po},
                         {"original_ci95", {co.lo, co.hi}},
                         {"reversed", pr},
                         {"reversed_ci95", {cr.lo, cr.hi}},
                         {"reversed_minus_original", pr - po},
                         {"reversed_le_original", pr <= po},
                         {"separated_at_95", cr.hi < co.lo}});
  }

  std::string ref_csv = "model,steps,original,reversed,scaled\n";
  ojson ref = ojson::array();
  for (const auto& r : published_reference_rows()) {
    std::snprintf(buf, sizeof(buf), "%d,%.1f,%.1f,%.1f", r.n_steps, r.original, r.reversed, r.scaled);
    ref_csv += r.model + "," + buf + "\n";
    ref.push_back({{"model", r.model}, {"steps", r.n_steps}, {"original", r.original},
                   {"reversed", r.reversed}, {"scaled", r.scaled}});
  }
  write_text(report_dir / "published_reference.csv", ref_csv);

  report["format"] = "layerlab-report";
  report["version"] = 1;
  report["config_hash"] = manifest ? manifest->config_hash() : "";
  report["subject"] = subject;
  if (config) {
    report["style"] = std::string(to_string(config->style));
    report["regime"] = config->subject == SubjectKind::ToyModel
                           ? "trained toy model (the trained regime only; prompted-mode behaviour is not modelled)"
                           : "external dump";
  }
  report["sampling"] = "problems regenerated per (steps, format) cell under derived seeds";
  report["cells"] = cells;
  report["answer_grid"] = grid;
  report["fragility"] = fragility;
  report["reference_annotation"] = {
      {"note", "full-scale published accuracies (percent), shown for orientation; not measured here"},
      {"rows", ref}};
  report["warnings"] = warnings;
  write_text(report_dir / "report.json", report.dump(2) + "\n");

  if (manifest) {
    manifest->add_artifact(report_dir / "report.json", "", "report");
    manifest->add_artifact(report_dir / "answer_grid.csv", "", "report");
    manifest->add_artifact(report_dir / "published_reference.csv", "", "report");
    for (const auto& cell : config->cells()) {
      const fs::path curve = report_dir / "curves" / (cell.label() + ".csv");
      if (fs::exists(curve)) manifest->add_artifact(curve, cell.label(), "curve");
    }
    manifest->save();
  }
  for (const auto& w : warnings) std::fprintf(stderr, "[report] warning: %s\n", w.get<std::string>().c_str());
  return complete ? 0 : 1;
}

int cmd_pipeline(const ExperimentConfig& config) {
  config.validate();
  {
    RunManifest manifest = open_manifest(config);
    bool subject_ok = true;
    if (config.subject == SubjectKind::ToyModel && config.checkpoint.empty()) {
      subject_ok = train_in_run(config, manifest);
      if (subject_ok && config.internalize) subject_ok = internalize_in_run(config, manifest);
      manifest.set_cell_state(kRunCell, subject_ok ? "ok" : "failed");
    }
    std::optional<ToyModel> model;
    if (subject_ok) model = load_subject(config, manifest);
    const ToyModel* subject = model ? &*model : nullptr;
    run_cells(config, manifest, [&](const CellSpec& cell) {
      const std::string label = cell.label();
      if (config.subject == SubjectKind::ToyModel && subject == nullptr) {
        manifest.record_stage(label, {"subject", false, "toy model unavailable", 0});
        return false;
      }
      if (!run_stage(manifest, label, "gen", [&] { stage_gen(config, manifest, cell); })) return false;
      if (!run_stage(manifest, label, "extract",
                     [&] { stage_extract(config, manifest, cell, subject); }))
        return false;
      if (config.subject == SubjectKind::ToyModel || !config.answers_pattern.empty()) {
        if (!run_stage(manifest, label, "answers",
                       [&] { stage_answers(config, manifest, cell, subject); }))
          return false;
      }
      return run_stage(manifest, label, "probe", [&] { stage_probe(config, manifest, cell); });
    });
    manifest.save();
  }
  return cmd_report(config.out_dir);
}

}  // namespace layerlab

// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Experiment orchestration: generate -> train -> extract -> probe -> report
// over a grid of (steps, format) cells.
//
// Config files are plain "key = value" lines. '#' starts a comment, blank
// lines are ignored, keys are unique. Lists are comma separated. See
// config_keys() for the accepted keys and to_config_text() for the
// canonical rendering that the manifest hashes.
//
// Layout of a run directory:
//
//   manifest.json
//   problems/<cell>.jsonl
//   toy/explicit.llck, toy/stage<k>.llck, toy/internalized.llck
//   activations/<cell>.llad
//   answers/<cell>.jsonl            {"id", "text"} per problem
//   probes/<cell>.csv, probes/<cell>.json
//   report/report.json, report/answer_grid.csv, report/published_reference.csv,
//   report/curves/<cell>.csv
//
// <cell> is "s<steps>-<format>", e.g. "s3-original".

#ifndef LAYERLAB_RUNNER_HPP_
#define LAYERLAB_RUNNER_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "layerlab/chaingen.hpp"
#include "layerlab/probekit.hpp"
#include "layerlab/toymodel.hpp"

namespace layerlab {

inline constexpr std::string_view kLayerlabVersion = "0.1.0";

struct CellSpec {
  int n_steps = 3;
  Format format = Format::Original;
  std::string label() const;
  bool operator==(const CellSpec&) const = default;
};

// "3:original" or "s3-original".
CellSpec parse_cell(std::string_view text);

enum class SubjectKind { ToyModel, ExternalDump };

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<int> steps{3, 4, 5};
  std::vector<Format> formats{Format::Original, Format::Reversed, Format::Scaled};
  std::vector<CellSpec> only_cells;  // restricts the grid when non-empty
  int max_value = 19;
  int n_samples = 2000;
  std::size_t n_train = 1600;
  std::size_t n_test = 400;
  PromptStyle style = PromptStyle::TrainedDirect;

  SubjectKind subject = SubjectKind::ToyModel;
  std::string subject_label;        // grid row name; defaults to "toy" or "dump"
  std::filesystem::path checkpoint;  // toy subject; empty = train inside the run
  // ExternalDump: LLAD path pattern, "{cell}", "{steps}" and "{format}" are
  // substituted. The answers pattern is optional.
  std::string dump_pattern;
  std::string answers_pattern;
  bool average_pairs = false;

  ProbeTrainConfig probe;
  double onset_threshold = 0.5;
  int onset_persistence = 2;

  ToyConfig toy{4, 128, 4, 512, 96, 1};
  TrainHyperparams train;
  int train_steps = 3;
  int train_problems = 6000;
  bool internalize = true;
  TrainHyperparams internalize_hyper;

  int cell_workers = 1;
  std::filesystem::path out_dir = "run";

  ExperimentConfig();
  // Throws ConfigError.
  void validate() const;
  std::vector<CellSpec> cells() const;
};

// Known keys with a one-line description each.
const std::vector<std::pair<std::string, std::string>>& config_keys();

// Throws ConfigError naming the line on unknown keys, duplicates or bad
// values.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_config_text(const ExperimentConfig& config);

// Seeds derived from the global seed. Stable across releases.
std::uint64_t cell_seed(const ExperimentConfig& config, const CellSpec& cell);
std::uint64_t split_seed(const ExperimentConfig& config, const CellSpec& cell);
std::uint64_t cell_probe_seed(const ExperimentConfig& config, const CellSpec& cell);
std::uint64_t train_seed(const ExperimentConfig& config);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ArtifactRecord {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::uint64_t bytes = 0;
  std::string cell;  // empty for run-level artifacts
  std::string kind;
};

struct StageStatus {
  std::string stage;
  bool ok = false;
  std::string error;
  double seconds = 0;
};

struct CellStatus {
  std::string label;
  std::string state = "pending";  // pending, ok, failed
  std::vector<StageStatus> stages;
};

// The run's single shared mutable record. All methods lock.
class RunManifest {
 public:
  RunManifest() = default;
  explicit RunManifest(std::filesystem::path run_dir);
  RunManifest(RunManifest&& other) noexcept;
  RunManifest& operator=(RunManifest&& other) noexcept;

  void set_config(const ExperimentConfig& config);
  // Hashes the file and records it; replaces an earlier record of the path.
  void add_artifact(const std::filesystem::path& file, const std::string& cell,
                    const std::string& kind);
  void record_stage(const std::string& cell, StageStatus status);
  void set_cell_state(const std::string& cell, const std::string& state);

  std::vector<ArtifactRecord> artifacts() const;
  std::map<std::string, CellStatus> cells() const;
  std::string config_hash() const;
  std::string config_text() const;
  const std::filesystem::path& run_dir() const { return run_dir_; }

  nlohmann::ordered_json to_json() const;
  void save() const;
  static RunManifest load(const std::filesystem::path& run_dir);

 private:
  mutable std::mutex mu_;
  std::filesystem::path run_dir_;
  std::string config_text_;
  std::string config_hash_;
  std::string created_;
  std::string updated_;
  std::vector<ArtifactRecord> artifacts_;
  std::map<std::string, CellStatus> cells_;
};

// Problems are regenerated per cell under cell_seed.
std::vector<ChainProblem> cell_problems(const ExperimentConfig& config, const CellSpec& cell);

// Original-format training chains with train_steps steps, excluding every
// result tuple that appears in an Original evaluation cell of the same
// length, so no evaluation prompt is ever trained on.
std::vector<ChainProblem> training_problems(const ExperimentConfig& config);

// Label-count and sample checks of an external dump against the cell's
// problems. Throws ShapeError.
void check_dump(const ActivationSet& set, const CellSpec& cell, const ExperimentConfig& config);

struct Interval {
  double lo = 0;
  double hi = 0;
};
// Wilson score interval, z = 1.96 by default.
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

struct ReferenceRow {
  std::string model;
  int n_steps;
  double original, reversed, scaled;  // percent
};
// Full-scale answer accuracies reported for the two large models. Rendered as
// an annotation only.
const std::vector<ReferenceRow>& published_reference_rows();

// Every command returns the process exit code: 0 only if all requested cells
// succeeded.
int cmd_gen(const ExperimentConfig& config);
int cmd_train_toy(const ExperimentConfig& config);
int cmd_internalize(const ExperimentConfig& config);
int cmd_extract(const ExperimentConfig& config);
int cmd_probe(const ExperimentConfig& config);
int cmd_report(const std::filesystem::path& run_dir);
int cmd_pipeline(const ExperimentConfig& config);

}  // namespace layerlab

#endif  // LAYERLAB_RUNNER_HPP_

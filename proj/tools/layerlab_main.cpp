// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// layerlab <subcommand> [--config FILE] [--seed N] [--out DIR]
//          [--cell STEPS:FORMAT]... [--subject toy[:CKPT] | dump:PATTERN]

#include <cstdio>
#include <malloc.h>

#include "CLI11.hpp"
#include "layerlab/error.hpp"
#include "layerlab/runner.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> cells;
  std::optional<std::string> subject;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "global seed (overrides the config)");
  app->add_option("--out", f.out, "run directory (overrides the config)");
  app->add_option("--cell", f.cells, "restrict to a grid cell, e.g. 3:original (repeatable)");
  app->add_option("--subject", f.subject, "toy, toy:<checkpoint> or dump:<llad pattern>");
}

layerlab::ExperimentConfig resolve(const CommonFlags& f) {
  using namespace layerlab;
  ExperimentConfig c = f.config_path.empty() ? ExperimentConfig{} : load_config(f.config_path);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (!f.cells.empty()) {
    c.only_cells.clear();
    for (const auto& s : f.cells) c.only_cells.push_back(parse_cell(s));
  }
  if (f.subject) {
    const std::string& s = *f.subject;
    if (s == "toy") {
      c.subject = SubjectKind::ToyModel;
    } else if (s.rfind("toy:", 0) == 0) {
      c.subject = SubjectKind::ToyModel;
      c.checkpoint = s.substr(4);
    } else if (s.rfind("dump:", 0) == 0) {
      c.subject = SubjectKind::ExternalDump;
      c.dump_pattern = s.substr(5);
    } else {
      throw ConfigError("--subject must be toy, toy:<checkpoint> or dump:<pattern>");
    }
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep them
  // in the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"layerlab: probing intermediate results of multi-step arithmetic"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string report_dir;

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const layerlab::ExperimentConfig&);
  };
  const Sub subs[] = {
      {"gen", "write problem files for every grid cell", layerlab::cmd_gen},
      {"train-toy", "train the toy model with explicit chain-of-thought", layerlab::cmd_train_toy},
      {"internalize", "run the step-removal curriculum on the explicit model", layerlab::cmd_internalize},
      {"extract", "capture final-token activations and answers per cell", layerlab::cmd_extract},
      {"probe", "train per-layer probes per cell", layerlab::cmd_probe},
      {"pipeline", "everything above, then report", layerlab::cmd_pipeline},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> commands;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, flags);
    commands.emplace_back(sub, &s);
  }
  CLI::App* report = app.add_subcommand("report", "consolidate a run directory");
  report->add_option("run_dir", report_dir, "run directory");
  add_common(report, flags);
  CLI::App* keys = app.add_subcommand("config-keys", "list the config file keys");

  CLI11_PARSE(app, argc, argv);

  try {
    if (keys->parsed()) {
      for (const auto& [key, help] : layerlab::config_keys()) std::printf("%-28s %s\n", key.c_str(), help.c_str());
      return 0;
    }
    if (report->parsed()) {
      if (report_dir.empty()) report_dir = resolve(flags).out_dir.string();
      return layerlab::cmd_report(report_dir);
    }
    for (const auto& [sub, s] : commands) {
      if (sub->parsed()) return s->run(resolve(flags));
    }
  } catch (const layerlab::Error& e) {
    std::fprintf(stderr, "layerlab: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "layerlab: %s\n", e.what());
    return 2;
  }
  return 2;
}

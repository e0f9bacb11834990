// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion followed by
// indented detail lines, and exits non-zero if anything failed.
//
//   layerlab_acceptance [--work DIR] [--only NAME]...

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layerlab/chaingen.hpp"
#include "layerlab/error.hpp"
#include "layerlab/probekit.hpp"
#include "layerlab/runner.hpp"
#include "layerlab/tensorio.hpp"
#include "layerlab/toymodel.hpp"

namespace fs = std::filesystem;
using namespace layerlab;

namespace {

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) ok_ = false;
    lines_.push_back(std::string(ok ? "ok   " : "BAD  ") + what);
  }
  void note(const std::string& what) { lines_.push_back("     " + what); }
  bool ok() const { return ok_; }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  bool ok_ = true;
  std::vector<std::string> lines_;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Folds the rendered equation block, whatever its line order, in tenths.
bool text_fold(const std::string& block, long& answer) {
  std::map<char, std::string> rhs;
  std::istringstream is(block);
  for (std::string line; std::getline(is, line);) {
    if (line.size() < 7 || line.substr(1, 3) != " = " || line.substr(line.size() - 2) != " ;") return false;
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
      } else if (value.contains(expr[0])) {
        const long k = tenths(expr.substr(4));
        value[var] = value[expr[0]] + (expr[2] == '+' ? k : -k);
      }
    }
    if (value.size() == before) return false;
  }
  if (!value.contains('A')) return false;
  answer = value['A'];
  return true;
}

// ---------------------------------------------------------------------------

void generator(Check& c) {
  const double crit = boost::math::quantile(boost::math::complement(boost::math::chi_squared(19), 0.001));
  c.expect(std::abs(crit - 43.82) < 0.005, fmt("chi-square 0.001 critical value for 19 dof = %.3f", crit));
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t violations = 0, total = 0, failed_tests = 0, tests = 0;
  double worst = 0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    for (int steps : {3, 4, 5}) {
      GenerationSpec spec;
      spec.n_steps = steps;
      spec.n_samples = 10000;
      spec.seed = seed;
      spec.dedupe = false;  // only 8000 distinct 3-step chains exist
      const auto problems = generate_dataset(spec);
      std::vector<std::vector<int>> hist(static_cast<std::size_t>(steps), std::vector<int>(20, 0));
      for (const auto& p : problems) {
        ++total;
        long folded = 0;
        const long last = p.step_results.back();
        const bool ok = evaluate_chain(p) == last && text_fold(equation_block(p), folded) &&
                        folded == 10 * last && static_cast<int>(p.step_results.size()) == steps;
        if (!ok) ++violations;
        for (int s = 0; s < steps; ++s) ++hist[static_cast<std::size_t>(s)][static_cast<std::size_t>(p.step_results[static_cast<std::size_t>(s)])];
      }
      for (const auto& h : hist) {
        double chi = 0;
        for (int n : h) chi += (n - 500.0) * (n - 500.0) / 500.0;
        worst = std::max(worst, chi);
        ++tests;
        if (chi >= crit) ++failed_tests;
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(violations == 0, std::to_string(violations) + " chain violations in " + std::to_string(total) +
                                " problems (recorded result, fold, and text fold)");
  c.expect(failed_tests == 0, std::to_string(tests - failed_tests) + "/" + std::to_string(tests) +
                                  " step histograms below the critical value (max " + fmt("%.2f)", worst));
  c.expect(secs < 10.0, fmt("runtime %.2f s (< 10 s)", secs));
}

void renderer(Check& c) {
  const ChainProblem p = chain_from_results({8, 3, 5, 10, 9});
  const std::string instruct =
      "E = 8 ;\nD = E - 5 ;\nC = D + 2 ;\nB = C + 5 ;\nA = B - 1 ;\n"
      "\nQuestion: What is the value of A? You must answer directly with A=xxx.\n\nAnswer: A=";
  const std::string direct = "E = 8 ;\nD = E - 5 ;\nC = D + 2 ;\nB = C + 5 ;\nA = B - 1 ;\nA=?\n</s></s>####";
  const std::string reverse = "A = B - 1 ;\nB = C + 5 ;\nC = D + 2 ;\nD = E - 5 ;\nE = 8 ;\n";
  const std::string scale = "E = 0.8 ;\nD = E - 0.5 ;\nC = D + 0.2 ;\nB = C + 0.5 ;\nA = B - 0.1 ;\n";
  c.expect(render_prompt(p, PromptStyle::PromptedInstruct).text == instruct, "PromptedInstruct box");
  c.expect(render_prompt(p, PromptStyle::TrainedDirect).text == direct, "TrainedDirect box");
  c.expect(equation_block(with_format(p, Format::Reversed)) == reverse, "Reverse box");
  c.expect(equation_block(with_format(p, Format::Scaled)) == scale, "Scale box");
  c.expect(render_prompt(with_format(p, Format::Reversed), PromptStyle::TrainedDirect).text ==
               reverse + "A=?\n</s></s>####",
           "Reverse block under the direct tail");
  c.expect(p.addends == std::vector<int>({-5, 2, 5, -1}), "addends [-5, +2, +5, -1]");
}

struct Planted {
  FeatureMatrix x;
  std::vector<int> y;
};

Planted planted(int n, int dim, int classes, double noise, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centroids(static_cast<std::size_t>(classes * dim));
  for (double& v : centroids) v = normal(gen);
  Planted p{FeatureMatrix(n, dim), std::vector<int>(static_cast<std::size_t>(n))};
  std::uniform_int_distribution<int> label(0, classes - 1);
  for (int i = 0; i < n; ++i) {
    const int k = label(gen);
    p.y[static_cast<std::size_t>(i)] = k;
    for (int f = 0; f < dim; ++f)
      p.x(i, f) = static_cast<float>(centroids[static_cast<std::size_t>(k * dim + f)] + noise * normal(gen));
  }
  return p;
}

void probe_sanity(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const ProbeTrainConfig cfg;  // 8 epochs, batch 32, lr 1e-3, standardized
  const Planted p = planted(2000, 64, 20, 0.01, 5);
  const auto train_x = p.x.topRows(1600);
  const auto test_x = p.x.bottomRows(400);
  const auto train_y = std::span(p.y).first(1600);
  const auto test_y = std::span(p.y).subspan(1600);
  const double planted_acc = eval_probe(train_probe(train_x, train_y, 20, cfg), test_x, test_y);
  c.expect(planted_acc >= 0.99, fmt("planted centroids: test accuracy %.4f (>= 0.99)", planted_acc));

  int inside = 0;
  double lo = 1, hi = 0;
  std::mt19937 gen(6);
  for (int k = 0; k < 200; ++k) {
    std::vector<int> y = p.y;
    std::shuffle(y.begin(), y.end(), gen);
    ProbeTrainConfig shuffled = cfg;
    shuffled.seed = static_cast<std::uint64_t>(k);
    const double a = eval_probe(train_probe(train_x, std::span(y).first(1600), 20, shuffled), test_x,
                                std::span(y).subspan(1600));
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    inside += a >= 0.02 && a <= 0.08 ? 1 : 0;
  }
  c.expect(inside >= 190, std::to_string(inside) + "/200 shuffled-label probes in [0.02, 0.08] (need 190); range " +
                              fmt("[%.4f, %.4f]", lo, hi));

  // Central differences in double on a 5-sample, 8-dim, 3-class instance.
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix<double> x(5, 8), w(3, 8);
  Eigen::VectorXd b(3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(gen);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(gen);
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = normal(gen);
  const std::vector<int> y = {2, 0, 1, 1, 2};
  RowMatrix<double> dw;
  Eigen::VectorXd db;
  softmax_xent<double>(w, b, x, y, &dw, &db);
  double worst = 0;
  const double h = 1e-6;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-12, std::max(std::abs(a), std::abs(n))); };
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    RowMatrix<double> wp = w, wm = w;
    wp.data()[i] += h;
    wm.data()[i] -= h;
    const double fd = (softmax_xent<double>(wp, b, x, y, nullptr, nullptr) -
                       softmax_xent<double>(wm, b, x, y, nullptr, nullptr)) / (2 * h);
    worst = std::max(worst, rel(dw.data()[i], fd));
  }
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    Eigen::VectorXd bp = b, bm = b;
    bp[i] += h;
    bm[i] -= h;
    const double fd = (softmax_xent<double>(w, bp, x, y, nullptr, nullptr) -
                       softmax_xent<double>(w, bm, x, y, nullptr, nullptr)) / (2 * h);
    worst = std::max(worst, rel(db[i], fd));
  }
  c.expect(worst < 1e-4, fmt("probe gradient vs finite differences: max relative error %.2e (< 1e-4)", worst));
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, fmt("runtime %.2f s (< 60 s)", secs));
}

TokenBatch random_batch(int batch, int length, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_int_distribution<int> tok(0, DslVocab::get().size() - 1);
  TokenBatch b;
  b.batch = batch;
  b.length = length;
  for (int i = 0; i < batch * length; ++i) {
    b.tokens.push_back(tok(gen));
    b.targets.push_back(i % 4 == 0 ? -1 : tok(gen));
  }
  return b;
}

void toy_checks(Check& c) {
  ToyConfig cfg{2, 16, 2, 32, 96, 3};
  const int vocab = DslVocab::get().size();

  // Causality: perturbing token t leaves every earlier logit bit-identical.
  {
    const auto params = ToyParams<float>::init(cfg, vocab, 1);
    const TokenBatch base = random_batch(3, 40, 2);
    const auto ref = forward_backward<float>(cfg, params, base, nullptr);
    std::size_t compared = 0, differing = 0, changed_at_t = 0;
    for (int t = 0; t < 40; ++t) {
      TokenBatch alt = base;
      for (int b = 0; b < 3; ++b) {
        int& tok = alt.tokens[static_cast<std::size_t>(b * 40 + t)];
        tok = (tok + 1 + t % (vocab - 1)) % vocab;
      }
      const auto out = forward_backward<float>(cfg, params, alt, nullptr);
      for (int b = 0; b < 3; ++b) {
        for (int i = 0; i <= t; ++i) {
          const Eigen::Index row = b * 40 + i;
          const bool same = (out.logits.row(row).array() == ref.logits.row(row).array()).all();
          if (i < t) {
            ++compared;
            differing += same ? 0 : 1;
          } else {
            changed_at_t += same ? 0 : 1;
          }
        }
      }
    }
    c.expect(differing == 0 && changed_at_t == 120,
             "causal mask: " + std::to_string(differing) + " of " + std::to_string(compared) +
                 " earlier positions changed; perturbed position changed in " + std::to_string(changed_at_t) + "/120");
  }

  // Full-model gradient in double.
  {
    ToyParams<double> params = ToyParams<float>::init(cfg, vocab, 4).cast<double>();
    std::mt19937 gen(5);
    std::normal_distribution<double> normal(0.0, 0.1);
    params.visit([&](const std::string&, auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += normal(gen);
    });
    const TokenBatch batch = random_batch(2, 16, 6);
    ToyParams<double> grads = ToyParams<double>::zeros(cfg, vocab);
    forward_backward<double>(cfg, params, batch, &grads);
    std::vector<double*> slots;
    std::vector<double> analytic;
    std::vector<std::string> names;
    params.visit([&](const std::string& name, auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        slots.push_back(t.data() + i);
        names.push_back(name);
      }
    });
    grads.visit([&](const std::string&, const auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) analytic.push_back(t.data()[i]);
    });
    // Every tensor contributes; sample entries with a fixed stride.
    double worst = 0;
    std::string worst_name;
    std::size_t checked = 0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < slots.size(); i += 13) {
      const double saved = *slots[i];
      *slots[i] = saved + h;
      const double up = forward_backward<double>(cfg, params, batch, nullptr).loss;
      *slots[i] = saved - h;
      const double down = forward_backward<double>(cfg, params, batch, nullptr).loss;
      *slots[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
      if (scale < 1e-6) continue;  // both vanish
      ++checked;
      const double r = std::abs(fd - analytic[i]) / scale;
      if (r > worst) {
        worst = r;
        worst_name = names[i];
      }
    }
    c.expect(worst < 1e-3, "gradient check, 2 layers d16: max relative error " + fmt("%.2e", worst) + " over " +
                               std::to_string(checked) + " entries (worst in " + worst_name + ")");
  }

  // Greedy decoding on a briefly trained model, three times.
  {
    GenerationSpec spec;
    spec.n_steps = 3;
    spec.n_samples = 300;
    spec.seed = 7;
    TrainHyperparams h;
    h.epochs = 2;
    h.learning_rate = 3e-3;
    h.warmup_steps = 10;
    const auto train = generate_dataset(spec);
    const ToyModel model = train_explicit(cfg, train, h);
    spec.seed = 8;
    spec.n_samples = 50;
    std::size_t same = 0;
    const auto test = generate_dataset(spec);
    for (const auto& p : test) {
      const std::string prompt = render_prompt(p, PromptStyle::TrainedDirect).text;
      const std::string a = generate(model, prompt, 24), b = generate(model, prompt, 24),
                        d = generate(model, prompt, 24);
      same += a == b && b == d ? 1 : 0;
    }
    c.expect(same == test.size(), "greedy decoding identical across 3 runs on " + std::to_string(same) + "/" +
                                      std::to_string(test.size()) + " prompts");
  }
}

ActivationSet random_set(std::size_t n, std::size_t layers, std::size_t dim, std::mt19937& gen) {
  std::normal_distribution<float> normal(0.0f, 2.0f);
  std::uniform_int_distribution<int> label(0, 19);
  std::uniform_int_distribution<int> steps(2, 6);
  std::vector<float> data(n * layers * dim);
  for (float& f : data) f = normal(gen);
  const int n_steps = steps(gen);
  std::vector<SampleMeta> meta(n);
  for (std::size_t i = 0; i < n; ++i) {
    meta[i].problem_id = "s" + std::to_string(n_steps) + "-x-" + std::to_string(i);
    for (int s = 0; s < n_steps; ++s) meta[i].step_results.push_back(label(gen));
    meta[i].format = static_cast<Format>(i % 3);
  }
  return ActivationSet(n, layers, dim, std::move(data), std::move(meta), "acceptance");
}

bool rejects(const std::vector<unsigned char>& bytes) {
  try {
    decode_llad(bytes);
  } catch (const FormatError&) {
    return true;
  }
  return false;
}

void llad(Check& c) {
  std::mt19937 gen(9);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::size_t round_trips = 0, cases = 0;
  for (int k = 0; k < 300; ++k) {
    const ActivationSet set = random_set(dim(gen), dim(gen), dim(gen), gen);
    const auto bytes = encode_llad(set);
    const ActivationSet back = decode_llad(bytes);
    ++cases;
    round_trips += back == set && encode_llad(back) == bytes &&
                           bytes.size() == llad_file_size(set.n_samples(), set.n_layers(), set.hidden_dim(),
                                                          encode_metadata(set).size())
                       ? 1
                       : 0;
  }
  c.expect(round_trips == cases, std::to_string(round_trips) + "/" + std::to_string(cases) +
                                     " random shapes round-trip bit-exactly");

  const ActivationSet small = random_set(3, 4, 5, gen);
  const auto good = encode_llad(small);
  std::size_t truncations = 0;
  for (std::size_t len = 0; len < good.size(); ++len)
    truncations += rejects(std::vector<unsigned char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(len)));
  c.expect(truncations == good.size(),
           std::to_string(truncations) + "/" + std::to_string(good.size()) + " truncations rejected");
  std::size_t header_hits = 0;
  for (std::size_t at = 0; at < 24; ++at) {
    auto bad = good;
    bad[at] ^= 0x5a;
    header_hits += rejects(bad);
  }
  c.expect(header_hits == 24, std::to_string(header_hits) + "/24 corrupted header bytes rejected");
  {
    auto trailing = good;
    trailing.push_back(0);
    auto meta = good;
    meta[kLladHeaderSize] = '{' + 1;
    auto nan = good;
    nan[good.size() - 2] = 0xc0;
    nan[good.size() - 1] = 0x7f;
    c.expect(rejects(trailing) && rejects(meta) && rejects(nan),
             "trailing bytes, broken metadata and a non-finite payload value rejected");
  }

  // Pair averaging against an explicit mean.
  const ActivationSet wide = random_set(7, 10, 6, gen);
  const ActivationSet avg = average_layer_pairs(wide);
  double worst = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t l = 0; l < 5; ++l) {
      for (std::size_t d = 0; d < 6; ++d) {
        const double ref = (static_cast<double>(wide.vector(i, 2 * l)[d]) + wide.vector(i, 2 * l + 1)[d]) / 2.0;
        worst = std::max(worst, std::abs(ref - avg.vector(i, l)[d]));
      }
    }
  }
  bool odd_rejected = false;
  try {
    average_layer_pairs(random_set(2, 3, 2, gen));
  } catch (const ShapeError&) {
    odd_rejected = true;
  }
  c.expect(avg.n_layers() == 5 && worst < 1e-6 && avg.meta() == wide.meta() && odd_rejected,
           "pair averaging 10 -> 5 layers, max deviation from the reference mean " + fmt("%.1e", worst) +
               "; odd layer count rejected");
}

// ---------------------------------------------------------------------------

struct RunResult {
  int exit_code = -1;
  double seconds = 0;
  fs::path dir;
};

RunResult run_pipeline(const fs::path& dir) {
  ExperimentConfig config;  // defaults: 3x3 grid, toy trained and internalized on 3-step Original
  config.out_dir = dir;
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.dir = dir;
  r.exit_code = cmd_pipeline(config);
  r.seconds = seconds_since(t0);
  return r;
}

const RunResult& first_run(const fs::path& work) {
  static const RunResult r = run_pipeline(work / "run_a");
  return r;
}

void end_to_end(Check& c, const fs::path& work) {
  const RunResult& run = first_run(work);
  c.expect(run.exit_code == 0, "pipeline exit code " + std::to_string(run.exit_code));
  c.expect(run.seconds < 7200, fmt("pipeline runtime %.0f s (< 2 h)", run.seconds));
  const fs::path answers = run.dir / "answers" / "s3-original.json";
  const fs::path probes = run.dir / "probes" / "s3-original.json";
  if (!fs::exists(answers) || !fs::exists(probes)) {
    c.expect(false, "s3-original answers and probes present");
    return;
  }
  const auto a = nlohmann::json::parse(slurp(answers))["answer"];
  const double acc = a["accuracy"].get<double>();
  c.expect(acc >= 0.9, "(a) held-out direct-answer accuracy " + fmt("%.4f", acc) + " on " +
                           std::to_string(a["n"].get<int>()) + " problems (>= 0.9)");

  const auto p = nlohmann::json::parse(slurp(probes))["probe"];
  const auto& rows = p["accuracy"];
  double best_step1 = 0;
  std::size_t best_layer = 0;
  for (std::size_t l = 0; l < rows.size(); ++l) {
    if (rows[l][0].get<double>() > best_step1) {
      best_step1 = rows[l][0].get<double>();
      best_layer = l;
    }
    std::string line = "layer " + std::to_string(l) + ":";
    for (const auto& v : rows[l]) line += fmt(" %.4f", v.get<double>());
    c.note(line);
  }
  c.expect(best_step1 >= 0.9, "(b) best step-1 probe accuracy " + fmt("%.4f", best_step1) + " at layer " +
                                  std::to_string(best_layer) + " (>= 0.9)");
  const auto& onsets = p["onsets"]["onset_layer"];
  bool staircase = true;
  std::optional<int> prev;
  std::string shown;
  for (const auto& o : onsets) {
    shown += o.is_null() ? " none" : " " + std::to_string(o.get<int>());
    if (o.is_null()) continue;
    if (prev && o.get<int>() < *prev) staircase = false;
    prev = o.get<int>();
  }
  c.expect(staircase, "(b) onsets (theta 0.5, persistence 2):" + shown + " non-decreasing over defined steps");
}

std::map<std::string, std::string> hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& a : RunManifest::load(dir).artifacts()) out[a.path] = a.sha256;
  return out;
}

void fragility(Check& c, const fs::path& work) {
  const RunResult& a = first_run(work);
  const fs::path report_path = a.dir / "report" / "report.json";
  if (!fs::exists(report_path)) {
    c.expect(false, "report.json present");
    return;
  }
  const auto report = nlohmann::json::parse(slurp(report_path));
  std::size_t filled = 0;
  for (const auto& row : report["answer_grid"]) {
    for (const char* f : {"original", "reversed", "scaled"}) filled += row.contains(f) && !row[f].is_null() ? 1 : 0;
  }
  c.expect(report["answer_grid"].size() == 3 && filled == 9,
           "answer grid has " + std::to_string(report["answer_grid"].size()) + " step rows and " +
               std::to_string(filled) + "/9 cells");
  std::size_t cell_files = 0;
  for (int s : {3, 4, 5}) {
    for (const char* f : {"original", "reversed", "scaled"}) {
      const std::string label = "s" + std::to_string(s) + "-" + f;
      cell_files += fs::exists(a.dir / "answers" / (label + ".json")) &&
                            fs::exists(a.dir / "probes" / (label + ".csv")) &&
                            fs::exists(a.dir / "report" / "curves" / (label + ".csv"))
                        ? 1
                        : 0;
    }
  }
  c.expect(cell_files == 9, std::to_string(cell_files) + "/9 cells have answers, probes and curves");
  c.note(slurp(a.dir / "report" / "answer_grid.csv").substr(0, 400));
  for (const auto& f : report["fragility"]) {
    c.note("steps " + std::to_string(f["steps"].get<int>()) + ": original " +
           fmt("%.3f [%.3f,", f["original"].get<double>(), f["original_ci95"][0].get<double>()) +
           fmt(" %.3f], reversed ", f["original_ci95"][1].get<double>()) +
           fmt("%.3f [%.3f,", f["reversed"].get<double>(), f["reversed_ci95"][0].get<double>()) +
           fmt(" %.3f]", f["reversed_ci95"][1].get<double>()) +
           (f["reversed_le_original"].get<bool>() ? "  reversed <= original" : "  reversed > original") +
           (f["separated_at_95"].get<bool>() ? ", separated at 95%" : ", intervals overlap"));
  }
  c.expect(report["fragility"].size() == 3, "Reversed vs Original reported with 95% intervals for 3 step counts");

  const RunResult b = run_pipeline(work / "run_b");
  c.expect(b.exit_code == 0, fmt("rerun exit code %.0f, ", b.exit_code) + fmt("%.0f s", b.seconds));
  const auto ha = hashes(a.dir), hb = hashes(b.dir);
  std::size_t equal = 0;
  for (const auto& [path, h] : ha) equal += hb.contains(path) && hb.at(path) == h ? 1 : 0;
  c.expect(!ha.empty() && equal == ha.size() && ha.size() == hb.size(),
           std::to_string(equal) + "/" + std::to_string(ha.size()) + " artifact hashes identical across reruns");
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      only.insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--work DIR] [--only NAME]...\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"generator", generator},
      {"renderer", renderer},
      {"probe_sanity", probe_sanity},
      {"toy_model", toy_checks},
      {"end_to_end", [&](Check& c) { end_to_end(c, work); }},
      {"fragility_grid", [&](Check& c) { fragility(c, work); }},
      {"llad", llad},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.contains(name)) continue;
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %s (%.1f s)\n", c.ok() ? "PASS" : "FAIL", name.c_str(), seconds_since(t0));
    for (const auto& line : c.lines()) {
      std::istringstream is(line);
      for (std::string l; std::getline(is, l);) std::printf("    %s\n", l.c_str());
    }
    std::fflush(stdout);
    failures += c.ok() ? 0 : 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

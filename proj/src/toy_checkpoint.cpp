// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "layerlab/error.hpp"
#include "layerlab/toymodel.hpp"

namespace layerlab {
namespace {

constexpr unsigned char kMagic[4] = {'L', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreamble = 12;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

TrainHyperparams hyper_from_json(const nlohmann::json& j) {
  TrainHyperparams h;
  h.batch_size = j.at("batch_size").get<int>();
  h.epochs = j.at("epochs").get<int>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.min_lr_ratio = j.at("min_lr_ratio").get<double>();
  h.warmup_steps = j.at("warmup_steps").get<int>();
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.adam_eps = j.at("adam_eps").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.grad_clip = j.at("grad_clip").get<double>();
  h.seed = j.at("seed").get<std::uint64_t>();
  return h;
}

}  // namespace

nlohmann::ordered_json to_json(const ToyConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["ff_dim"] = cfg.ff_dim;
  j["context_len"] = cfg.context_len;
  j["seed"] = cfg.seed;
  return j;
}

ToyConfig toy_config_from_json(const nlohmann::json& j) {
  ToyConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.ff_dim = j.at("ff_dim").get<int>();
  cfg.context_len = j.at("context_len").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json to_json(const TrainHyperparams& h) {
  nlohmann::ordered_json j;
  j["batch_size"] = h.batch_size;
  j["epochs"] = h.epochs;
  j["learning_rate"] = h.learning_rate;
  j["min_lr_ratio"] = h.min_lr_ratio;
  j["warmup_steps"] = h.warmup_steps;
  j["beta1"] = h.beta1;
  j["beta2"] = h.beta2;
  j["adam_eps"] = h.adam_eps;
  j["weight_decay"] = h.weight_decay;
  j["grad_clip"] = h.grad_clip;
  j["seed"] = h.seed;
  j["optimizer"] = "adamw";
  return j;
}

std::vector<unsigned char> encode_checkpoint(const ToyModel& model) {
  nlohmann::ordered_json header;
  header["format"] = "LLCK";
  header["version"] = kVersion;
  header["config"] = to_json(model.config());
  header["vocab"] = DslVocab::get().tokens();
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& s : model.history()) {
    nlohmann::ordered_json r;
    r["stage_index"] = s.stage_index;
    r["removed_steps"] = s.removed_steps;
    r["optimizer_steps"] = s.optimizer_steps;
    r["epochs"] = s.epochs;
    r["final_loss"] = s.final_loss;
    r["loss_curve"] = s.loss_curve;
    r["hyper"] = to_json(s.hyper);
    history.push_back(r);
  }
  header["history"] = history;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  model.params().visit([&](const std::string& name, const auto& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  model.params().visit([&](const std::string&, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(t.data()[i]));
  });
  return out;
}

ToyModel decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < kPreamble) throw FormatError("truncated checkpoint preamble", bytes.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kMagic[i]) throw FormatError("bad checkpoint magic", i);
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < kPreamble + header_len) throw FormatError("truncated checkpoint header", bytes.size());

  nlohmann::json header;
  ToyConfig cfg;
  std::vector<StageRecord> history;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
    cfg = toy_config_from_json(header.at("config"));
    if (header.at("vocab").get<std::vector<std::string>>() != DslVocab::get().tokens())
      throw FormatError("checkpoint vocabulary differs from the DSL vocabulary", kPreamble);
    for (const auto& r : header.at("history")) {
      StageRecord s;
      s.stage_index = r.at("stage_index").get<int>();
      s.removed_steps = r.at("removed_steps").get<int>();
      s.optimizer_steps = r.at("optimizer_steps").get<int>();
      s.epochs = r.at("epochs").get<int>();
      s.final_loss = r.at("final_loss").get<double>();
      s.loss_curve = r.at("loss_curve").get<std::vector<double>>();
      s.hyper = hyper_from_json(r.at("hyper"));
      history.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), kPreamble);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what(), kPreamble);
  }

  ToyParams<float> params = ToyParams<float>::zeros(cfg, DslVocab::get().size());
  const auto& dir = header.at("tensors");
  std::size_t index = 0;
  std::size_t at = kPreamble + header_len;
  params.visit([&](const std::string& name, auto& t) {
    if (index >= dir.size()) throw FormatError("checkpoint tensor directory too short", kPreamble);
    const auto& entry = dir[index++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Eigen::Index>() != t.rows() ||
        entry.at("cols").get<Eigen::Index>() != t.cols())
      throw FormatError("checkpoint tensor " + name + " does not match the config", kPreamble);
    const std::size_t need = 4 * static_cast<std::size_t>(t.size());
    if (bytes.size() < at + need) throw FormatError("truncated checkpoint weights", bytes.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const float f = std::bit_cast<float>(get_u32(bytes, at));
      if (!std::isfinite(f)) throw FormatError("non-finite checkpoint weight", at);
      t.data()[i] = f;
      at += 4;
    }
  });
  if (index != dir.size()) throw FormatError("checkpoint tensor directory too long", kPreamble);
  if (at != bytes.size()) throw FormatError("trailing bytes after checkpoint weights", at);
  return ToyModel(cfg, std::move(params), std::move(history));
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

ToyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace layerlab

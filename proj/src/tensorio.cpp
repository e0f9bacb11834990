// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "layerlab/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "layerlab/error.hpp"
#include "layerlab/rng.hpp"

namespace layerlab {
namespace {

constexpr unsigned char kMagic[4] = {'L', 'L', 'A', 'D'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw ShapeError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

ActivationSet::ActivationSet(std::size_t n_samples, std::size_t n_layers, std::size_t hidden_dim)
    : n_samples_(n_samples),
      n_layers_(n_layers),
      hidden_dim_(hidden_dim),
      data_(n_samples * n_layers * hidden_dim, 0.0f),
      meta_(n_samples) {}

ActivationSet::ActivationSet(std::size_t n_samples, std::size_t n_layers, std::size_t hidden_dim,
                             std::vector<float> data, std::vector<SampleMeta> meta,
                             std::string source_tag)
    : n_samples_(n_samples),
      n_layers_(n_layers),
      hidden_dim_(hidden_dim),
      data_(std::move(data)),
      meta_(std::move(meta)),
      source_tag_(std::move(source_tag)) {
  if (data_.size() != n_samples_ * n_layers_ * hidden_dim_)
    throw ShapeError("activation payload has " + std::to_string(data_.size()) +
                     " floats, expected " + std::to_string(n_samples_ * n_layers_ * hidden_dim_));
  if (meta_.size() != n_samples_) throw ShapeError("one metadata record per sample required");
}

std::span<const float> ActivationSet::vector(std::size_t sample, std::size_t layer) const {
  return std::span<const float>(data_).subspan((sample * n_layers_ + layer) * hidden_dim_,
                                               hidden_dim_);
}

std::span<float> ActivationSet::mutable_vector(std::size_t sample, std::size_t layer) {
  return std::span<float>(data_).subspan((sample * n_layers_ + layer) * hidden_dim_, hidden_dim_);
}

std::size_t ActivationSet::n_steps() const {
  if (meta_.empty()) return 0;
  const std::size_t n = meta_.front().step_results.size();
  for (const auto& m : meta_) {
    if (m.step_results.size() != n)
      throw ShapeError("samples disagree on step count (" + std::to_string(n) + " vs " +
                       std::to_string(m.step_results.size()) + " for " + m.problem_id + ")");
  }
  return n;
}

int ActivationSet::max_value() const {
  int m = 0;
  for (const auto& s : meta_) m = std::max(m, s.max_value);
  return m;
}

void ActivationSet::validate() const {
  if (data_.size() != n_samples_ * n_layers_ * hidden_dim_)
    throw ShapeError("activation payload size does not match shape");
  if (meta_.size() != n_samples_) throw ShapeError("one metadata record per sample required");
  for (const auto& m : meta_) {
    for (int r : m.step_results) {
      if (r < 0 || r > m.max_value)
        throw ConfigError("label " + std::to_string(r) + " outside [0, M] for " + m.problem_id);
    }
  }
  for (float f : data_) {
    if (!std::isfinite(f)) throw ConfigError("non-finite activation value");
  }
}

ActivationSet ActivationSet::subset(std::span<const std::size_t> samples) const {
  std::vector<float> data;
  data.reserve(samples.size() * n_layers_ * hidden_dim_);
  std::vector<SampleMeta> meta;
  meta.reserve(samples.size());
  const std::size_t stride = n_layers_ * hidden_dim_;
  for (std::size_t s : samples) {
    if (s >= n_samples_) throw ShapeError("sample index out of range");
    const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(s * stride);
    data.insert(data.end(), begin, begin + static_cast<std::ptrdiff_t>(stride));
    meta.push_back(meta_[s]);
  }
  return ActivationSet(samples.size(), n_layers_, hidden_dim_, std::move(data), std::move(meta),
                       source_tag_);
}

std::uint64_t llad_file_size(std::uint64_t n_samples, std::uint64_t n_layers,
                             std::uint64_t hidden_dim, std::uint64_t metadata_length) {
  return kLladHeaderSize + metadata_length + 4 * n_samples * n_layers * hidden_dim;
}

std::string encode_metadata(const ActivationSet& set) {
  std::string out;
  for (const auto& m : set.meta()) {
    nlohmann::ordered_json j;
    j["problem_id"] = m.problem_id;
    j["step_results"] = m.step_results;
    j["M"] = m.max_value;
    j["format"] = to_string(m.format);
    j["style"] = to_string(m.style);
    if (!m.final_token.empty()) j["final_token"] = m.final_token;
    j["source_tag"] = set.source_tag();
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<unsigned char> encode_llad(const ActivationSet& set) {
  const std::string meta = encode_metadata(set);
  std::vector<unsigned char> out;
  out.reserve(llad_file_size(set.n_samples(), set.n_layers(), set.hidden_dim(), meta.size()));
  for (unsigned char c : kMagic) out.push_back(c);
  put_u32(out, kLladVersion);
  put_u32(out, checked_u32(set.n_samples(), "n_samples"));
  put_u32(out, checked_u32(set.n_layers(), "n_layers"));
  put_u32(out, checked_u32(set.hidden_dim(), "hidden_dim"));
  put_u32(out, checked_u32(meta.size(), "metadata_length"));
  out.resize(kLladHeaderSize, 0);
  out.insert(out.end(), meta.begin(), meta.end());
  for (float f : set.data()) {
    if (!std::isfinite(f)) throw ConfigError("refusing to write non-finite activation");
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

ActivationSet decode_llad(std::span<const unsigned char> bytes) {
  if (bytes.size() < kLladHeaderSize) throw FormatError("truncated LLAD header", bytes.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kMagic[i]) throw FormatError("bad LLAD magic", i);
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kLladVersion)
    throw FormatError("unsupported LLAD version " + std::to_string(version), 4);
  const std::uint64_t n_samples = get_u32(bytes, 8);
  const std::uint64_t n_layers = get_u32(bytes, 12);
  const std::uint64_t hidden_dim = get_u32(bytes, 16);
  const std::uint64_t meta_len = get_u32(bytes, 20);

  const std::uint64_t meta_end = kLladHeaderSize + meta_len;
  if (bytes.size() < meta_end) throw FormatError("truncated LLAD metadata", bytes.size());
  const std::uint64_t expected = llad_file_size(n_samples, n_layers, hidden_dim, meta_len);
  if (bytes.size() < expected) throw FormatError("truncated LLAD payload", bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after LLAD payload", expected);

  std::vector<SampleMeta> meta;
  meta.reserve(n_samples);
  std::string source_tag;
  std::size_t pos = kLladHeaderSize;
  while (pos < meta_end) {
    const auto* begin = reinterpret_cast<const char*>(bytes.data()) + pos;
    const auto* end =
        static_cast<const char*>(std::memchr(begin, '\n', static_cast<std::size_t>(meta_end - pos)));
    if (end == nullptr) throw FormatError("unterminated metadata line", pos);
    try {
      const auto j = nlohmann::json::parse(begin, end);
      SampleMeta m;
      m.problem_id = j.at("problem_id").get<std::string>();
      m.step_results = j.at("step_results").get<std::vector<int>>();
      m.max_value = j.at("M").get<int>();
      m.format = parse_format(j.at("format").get<std::string>());
      m.style = parse_style(j.at("style").get<std::string>());
      m.final_token = j.value("final_token", std::string{});
      if (meta.empty()) source_tag = j.value("source_tag", std::string{});
      for (int r : m.step_results) {
        if (r < 0 || r > m.max_value) throw ConfigError("label outside [0, M]");
      }
      meta.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad metadata record: ") + e.what(), pos);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("bad metadata record: ") + e.what(), pos);
    }
    pos = static_cast<std::size_t>(end - reinterpret_cast<const char*>(bytes.data())) + 1;
  }
  if (meta.size() != n_samples)
    throw FormatError("metadata has " + std::to_string(meta.size()) + " records for " +
                          std::to_string(n_samples) + " samples",
                      kLladHeaderSize);

  const std::uint64_t n_floats = n_samples * n_layers * hidden_dim;
  std::vector<float> data(n_floats);
  for (std::uint64_t i = 0; i < n_floats; ++i) {
    const std::uint64_t at = meta_end + 4 * i;
    const float f = std::bit_cast<float>(get_u32(bytes, at));
    if (!std::isfinite(f)) throw FormatError("non-finite float in payload", at);
    data[i] = f;
  }
  return ActivationSet(n_samples, n_layers, hidden_dim, std::move(data), std::move(meta),
                       std::move(source_tag));
}

void write_activations(const ActivationSet& set, const std::filesystem::path& path) {
  const auto bytes = encode_llad(set);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

ActivationSet read_activations(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return decode_llad(bytes);
}

ActivationSet average_layer_pairs(const ActivationSet& set) {
  if (set.n_layers() % 2 != 0)
    throw ShapeError("layer-pair averaging needs an even layer count, got " +
                     std::to_string(set.n_layers()));
  const std::size_t out_layers = set.n_layers() / 2;
  const std::size_t dim = set.hidden_dim();
  std::vector<float> data(set.n_samples() * out_layers * dim);
  for (std::size_t s = 0; s < set.n_samples(); ++s) {
    for (std::size_t j = 0; j < out_layers; ++j) {
      const auto a = set.vector(s, 2 * j);
      const auto b = set.vector(s, 2 * j + 1);
      float* out = data.data() + (s * out_layers + j) * dim;
      for (std::size_t f = 0; f < dim; ++f) {
        out[f] = static_cast<float>((static_cast<double>(a[f]) + static_cast<double>(b[f])) / 2.0);
      }
    }
  }
  return ActivationSet(set.n_samples(), out_layers, dim, std::move(data), set.meta(),
                       set.source_tag());
}

SplitIndex split_train_test(std::size_t n_samples, std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed) {
  if (n_train + n_test > n_samples)
    throw ConfigError("split needs " + std::to_string(n_train + n_test) + " samples, have " +
                      std::to_string(n_samples));
  std::vector<std::size_t> order(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  SplitIndex split;
  split.seed = seed;
  split.train_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

}  // namespace layerlab

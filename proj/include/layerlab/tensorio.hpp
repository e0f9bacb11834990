// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

// Per-layer hidden states captured at the final prompt token, and the LLAD
// v1 dump format used to exchange them.
//
// LLAD v1 layout (all integers and floats little-endian):
//
//   offset  size  field
//   0       4     magic "LLAD"
//   4       4     u32 version (= 1)
//   8       4     u32 n_samples
//   12      4     u32 n_layers
//   16      4     u32 hidden_dim
//   20      4     u32 metadata_length
//   24      40    reserved, zero
//   64      ...   metadata: UTF-8 JSON, one sample record per line
//   ...     ...   f32 payload [n_samples][n_layers][hidden_dim]

#ifndef LAYERLAB_TENSORIO_HPP_
#define LAYERLAB_TENSORIO_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layerlab/chaingen.hpp"

namespace layerlab {

inline constexpr std::uint32_t kLladVersion = 1;
inline constexpr std::size_t kLladHeaderSize = 64;

struct SampleMeta {
  std::string problem_id;
  std::vector<int> step_results;
  int max_value = 19;
  Format format = Format::Original;
  PromptStyle style = PromptStyle::TrainedDirect;
  std::string final_token;  // optional; filled by extractors that know it

  bool operator==(const SampleMeta&) const = default;
};

class ActivationSet {
 public:
  ActivationSet() = default;
  ActivationSet(std::size_t n_samples, std::size_t n_layers, std::size_t hidden_dim);
  ActivationSet(std::size_t n_samples, std::size_t n_layers, std::size_t hidden_dim,
                std::vector<float> data, std::vector<SampleMeta> meta, std::string source_tag);

  std::size_t n_samples() const { return n_samples_; }
  std::size_t n_layers() const { return n_layers_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  std::span<const float> data() const { return data_; }
  std::span<float> mutable_data() { return data_; }
  std::span<const float> vector(std::size_t sample, std::size_t layer) const;
  std::span<float> mutable_vector(std::size_t sample, std::size_t layer);

  const std::vector<SampleMeta>& meta() const { return meta_; }
  std::vector<SampleMeta>& mutable_meta() { return meta_; }
  const std::string& source_tag() const { return source_tag_; }
  void set_source_tag(std::string tag) { source_tag_ = std::move(tag); }

  // Number of step labels per sample; throws ShapeError if inconsistent.
  std::size_t n_steps() const;
  // Largest M across samples (class count is M + 1).
  int max_value() const;

  // Throws ShapeError / ConfigError on any broken invariant.
  void validate() const;

  ActivationSet subset(std::span<const std::size_t> samples) const;

  bool operator==(const ActivationSet&) const = default;

 private:
  std::size_t n_samples_ = 0;
  std::size_t n_layers_ = 0;
  std::size_t hidden_dim_ = 0;
  std::vector<float> data_;
  std::vector<SampleMeta> meta_;
  std::string source_tag_;
};

std::uint64_t llad_file_size(std::uint64_t n_samples, std::uint64_t n_layers,
                             std::uint64_t hidden_dim, std::uint64_t metadata_length);

std::string encode_metadata(const ActivationSet& set);
std::vector<unsigned char> encode_llad(const ActivationSet& set);
// Throws FormatError carrying the byte offset of the first problem found.
ActivationSet decode_llad(std::span<const unsigned char> bytes);

void write_activations(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet read_activations(const std::filesystem::path& path);

// Output layer j is the mean of input layers 2j and 2j+1.
ActivationSet average_layer_pairs(const ActivationSet& set);

struct SplitIndex {
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
  std::uint64_t seed = 0;
};

SplitIndex split_train_test(std::size_t n_samples, std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed);
inline SplitIndex split_train_test(const ActivationSet& set, std::size_t n_train,
                                   std::size_t n_test, std::uint64_t seed) {
  return split_train_test(set.n_samples(), n_train, n_test, seed);
}

}  // namespace layerlab

#endif  // LAYERLAB_TENSORIO_HPP_

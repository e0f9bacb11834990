// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef LAYERLAB_ERROR_HPP_
#define LAYERLAB_ERROR_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace layerlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or a request the inputs cannot satisfy.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text file. `offset` is the byte position where
// decoding stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace layerlab

#endif  // LAYERLAB_ERROR_HPP_

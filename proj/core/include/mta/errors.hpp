#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mta {

/// Invalid configuration or a violated spec/shape invariant. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures. CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text input; carries the byte offset where decoding stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// NaN/Inf detected in activations, costs or losses.
class NumericalFault : public std::runtime_error {
 public:
  NumericalFault(const std::string& what, int layer = -1)
      : std::runtime_error(layer >= 0 ? what + " (layer " + std::to_string(layer) + ")" : what),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

}  // namespace mta

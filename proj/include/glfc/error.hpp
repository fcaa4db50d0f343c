#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glfc {

// Rejected input: shape mismatch, layout mismatch, empty collections, bad
// arguments to an operation.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid experiment or objective configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value appeared during a forward/backward pass or an
// iterative sample update. `layer()` is the index of the layer whose output
// first went non-finite (equal to the layer count when the loss itself did).
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t layer)
      : std::runtime_error(what + " (layer " + std::to_string(layer) + ")"),
        layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

// Label recovery found no unique negative last-layer gradient entry.
class RecoveryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glfc

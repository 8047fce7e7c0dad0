#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pacs {

// Bad argument values handed to a library call (token out of range, length mismatch, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration: unknown ids, violated hyperparameter preconditions.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Requested enumeration or allocation exceeds the supported size.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value met during differentiation or an optimizer update.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}

  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

}  // namespace pacs

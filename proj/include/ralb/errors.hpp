#pragma once

#include <stdexcept>
#include <string>

namespace ralb {

// Bad arguments: shape/length mismatches, out-of-range indices, missing side data.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mathematically undefined input (zero-norm vectors, degenerate denominators).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operation requested in an invalid lifecycle state (e.g. missing snapshot).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Configuration the implementation does not support (e.g. DLR with K < 3).
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent files on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf losses and failed gradient checks.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ralb

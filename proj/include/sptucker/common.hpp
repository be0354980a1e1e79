#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sptucker {

// Error taxonomy mirrored by the CLI exit-code contract:
//   ConfigError -> 2, DataError (and FormatError) -> 3, NumericError -> 4.
// DomainError marks violated preconditions on library calls.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Model/metrics file problems: bad magic, version, truncation, inconsistent dims.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite parameters or gradients during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sptucker

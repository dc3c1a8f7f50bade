#pragma once

#include <stdexcept>
#include <string>

namespace rmtbag {

// Invalid configuration supplied by the caller (bad flags, bad hyperparameters,
// malformed model). Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data that cannot be consumed (unparseable CSV, unknown labels,
// degenerate class sizes). Maps to CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure inside an otherwise valid computation (non-convergent
// fixed point, indefinite system, negative predicted variance). Maps to CLI
// exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rmtbag

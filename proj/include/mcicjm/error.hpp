#pragma once

#include <stdexcept>
#include <string>

namespace mcicjm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a numerical routine (non-finite time, a > b, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Inconsistent model or sampler configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data that violates a record invariant. Messages carry the offending line
// when the data came from a file.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite integrands, failed factorizations, unbracketed roots.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcicjm

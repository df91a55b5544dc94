#pragma once

#include <stdexcept>
#include <string>

namespace grlab {

// Base for every error raised by the library. Each subclass maps to one
// failure category so callers (the CLI in particular) can pick exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Index or shape outside the policy's dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Enumeration or table size beyond the configured limits.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by an update or a loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed rollout data (missing behavior log-probs, bad weights, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SchedulingError : public Error {
 public:
  using Error::Error;
};

}  // namespace grlab

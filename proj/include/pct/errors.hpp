#pragma once

#include <stdexcept>
#include <string>

namespace pct {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can catch one type and still inspect the concrete category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN, zero-norm vectors and similar numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (strides, head counts, mismatched branches).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Linear system is singular or too badly conditioned to solve.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol cannot be run on the given data.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Dataset specification is invalid.
class SpecError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pct

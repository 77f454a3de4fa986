#pragma once

#include <stdexcept>
#include <string>

namespace hact {

/// Base class for every error raised by the library. `exit_code()` is the
/// process exit code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const { return 2; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// API misuse (backward on a non-scalar, invalid head index, ...).
class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

/// Malformed or inconsistent input data (projection, crop, fit, file formats).
class DataError : public Error {
 public:
  using Error::Error;
};

class LoadError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite losses or gradients during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

/// Raised by the gradient checker when the probed function is not deterministic.
class DiagnosticError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

}  // namespace hact

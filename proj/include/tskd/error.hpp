#pragma once

#include <stdexcept>
#include <string>

namespace tskd {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a command.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad user input: malformed config, out-of-range flag, inconsistent shapes.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A model or data configuration that cannot be satisfied.
class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Malformed or corrupted persisted artifact.
class IntegrityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A command was run before the command that produces its inputs.
class DependencyError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Training diverged (NaN/Inf loss).
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace tskd

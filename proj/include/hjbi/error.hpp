#pragma once

#include <stdexcept>
#include <string>

namespace hjbi {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, empty control sets, malformed operator definitions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Expression or config syntax error with a 1-based source position.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& what, int line, int column)
      : ConfigError(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// The monotone stencil cannot be built (diagonal dominance violated).
class AdmissibilityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared while time stepping.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// An iterative solve hit its iteration cap.
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A diagnostic could not separate signal from transient (e.g. long-time slope not flat yet).
class InconclusiveError : public Error {
 public:
  using Error::Error;
};

/// A structural hypothesis (ellipticity, coercivity declaration) required by an operation fails.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// The explicit step demanded by the CFL budget is below the configured floor.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace hjbi

#pragma once

#include <stdexcept>
#include <string>

namespace fairprice {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed case or data file. Carries the offending location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0, int column = 0)
      : Error(line > 0 ? "line " + std::to_string(line) +
                             (column > 0 ? ", column " + std::to_string(column) : "") +
                             ": " + what
                       : what),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

  /// Same location, message prefixed with `context` (typically the file path).
  ParseError prefixed(const std::string& context) const {
    return ParseError(Raw{}, context + ": " + what(), line_, column_);
  }

 private:
  struct Raw {};
  ParseError(Raw, const std::string& msg, int line, int column)
      : Error(msg), line_(line), column_(column) {}

  int line_;
  int column_;
};

/// Line graph is not connected.
class DisconnectedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Market clearing has no feasible dispatch for the given forecast.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver ran out of budget before meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (final residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace fairprice

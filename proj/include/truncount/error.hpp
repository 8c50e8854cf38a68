#pragma once

#include <stdexcept>
#include <string>

namespace truncount {

// Input that cannot be accepted: malformed files, invariant violations,
// unmet preconditions. The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t row, std::string column)
      : ValidationError(what), row_(row), column_(std::move(column)) {}

  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical failure during fitting or estimation. Exit code 3 in the CLI.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularDesignError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace truncount

#pragma once

#include <stdexcept>
#include <string>

namespace eitskin {

/// Failure categories. The CLI maps each one onto a stable exit code.
enum class ErrorKind {
  InvalidArgument,
  Scenario,
  Solver,
  NotPositiveDefinite,
  Divergence,
  DimensionMismatch,
  InsufficientGroups,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Malformed scenario text; line and column are 1-based, 0 when unknown.
class ScenarioError : public Error {
 public:
  ScenarioError(const std::string& what, int line = 0, int column = 0)
      : Error(ErrorKind::Scenario, what), line_(line), column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(const std::string& what, double min_pivot)
      : Error(ErrorKind::NotPositiveDefinite, what), min_pivot_(min_pivot) {}

  double min_pivot() const noexcept { return min_pivot_; }

 private:
  double min_pivot_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(ErrorKind::Divergence, what), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

inline void require(bool condition, const std::string& what, ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!condition) throw Error(kind, what);
}

}  // namespace eitskin

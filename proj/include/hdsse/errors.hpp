#pragma once

#include <stdexcept>
#include <string>

namespace hdsse {

/// Malformed input text (model files, checkpoints, switch files).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Structurally invalid network (cycle, disconnected node, orphan customer, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Iterative method exhausted its iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations)
      : std::runtime_error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

/// Gain matrix not positive definite: the measurement set does not observe the state.
class ObservabilityError : public std::runtime_error {
 public:
  ObservabilityError(const std::string& what, double rcond)
      : std::runtime_error(what), rcond_(rcond) {}
  /// Reciprocal condition estimate of the gain matrix (0 when the factorization failed).
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

}  // namespace hdsse

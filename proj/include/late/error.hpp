#pragma once

#include <stdexcept>
#include <string>

namespace late {

/// Base error. `code()` is a stable machine-parseable tag; `what()` is the
/// human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Invalid argument or malformed in-memory input.
class InputError : public Error {
 public:
  explicit InputError(const std::string& message) : Error("input", message) {}
};

/// File content that could not be parsed; message names file and line.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error("parse", message) {}
};

/// Parsed but semantically invalid data (dimension mismatch, out-of-range rate).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message) : Error("validation", message) {}
};

/// A ridge system (M + lambda I) that could not be solved to tolerance.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& message, double lambda, double rcond)
      : Error("singular-system", message), lambda_(lambda), rcond_(rcond) {}

  double lambda() const noexcept { return lambda_; }
  double rcond() const noexcept { return rcond_; }

 private:
  double lambda_;
  double rcond_;
};

/// A propensity-score-difference fit that carries no signal.
class DegenerateFitError : public Error {
 public:
  explicit DegenerateFitError(const std::string& message)
      : Error("degenerate-fit", message) {}
};

/// Rejection sampling that cannot reach the requested sample size.
class DegenerateDesignError : public Error {
 public:
  DegenerateDesignError(const std::string& message, double acceptance_rate)
      : Error("degenerate-design", message), acceptance_rate_(acceptance_rate) {}

  double acceptance_rate() const noexcept { return acceptance_rate_; }

 private:
  double acceptance_rate_;
};

/// Hyperparameter search in which every candidate failed.
class ExhaustedSearchError : public Error {
 public:
  explicit ExhaustedSearchError(const std::string& message)
      : Error("exhausted-search", message) {}
};

/// Filesystem failure; message names the path.
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace late

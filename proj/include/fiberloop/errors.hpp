#ifndef FIBERLOOP_ERRORS_HPP_
#define FIBERLOOP_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <vector>

namespace fiberloop {

// Base for all library errors so callers can catch one type at the CLI
// boundary and map it to an exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InfeasibleEndpoints : public Error {
 public:
  using Error::Error;
};

class NumericalDivergence : public Error {
 public:
  using Error::Error;
};

class DegenerateLine : public Error {
 public:
  using Error::Error;
};

class PointAtInfinity : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Collects every violation found while validating a config, not just the
// first one.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& summary, std::vector<std::string> issues)
      : Error(summary), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

}  // namespace fiberloop

#endif  // FIBERLOOP_ERRORS_HPP_

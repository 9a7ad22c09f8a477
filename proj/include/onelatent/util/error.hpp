#pragma once

#include <stdexcept>
#include <string>

namespace onelatent {

// Precondition broken by the caller (bad shape, out-of-range id, wrong stage).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or Inf produced inside a sanctioned tensor op.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string op, const std::string& what)
      : std::runtime_error("numeric fault in " + op + ": " + what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// A sequence or rendered text does not fit its fixed budget.
class OverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Target store written by a different frozen model, front-end or width.
class StaleTargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Artifacts produced by incompatible upstream configs or checkpoints.
class LineageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline step was asked to run before its inputs exist.
class DependencyError : public std::runtime_error {
 public:
  DependencyError(const std::string& what, std::string artifact)
      : std::runtime_error(what), artifact_(std::move(artifact)) {}
  const std::string& artifact() const noexcept { return artifact_; }

 private:
  std::string artifact_;
};

// A sample whose original reasoning trace fails judge validation.
class CorruptSampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace onelatent

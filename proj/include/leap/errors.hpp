#pragma once

#include <stdexcept>
#include <string>

namespace leap {

/// Out-of-range index or parameter.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a documented precondition (malformed policy output,
/// undefined expert query, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An observation sequence with zero probability under the model.
class InconsistentEvidence : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Exhaustive computation refused because it would exceed a configured cap.
class ResourceLimit : public std::length_error {
 public:
  using std::length_error::length_error;
};

}  // namespace leap

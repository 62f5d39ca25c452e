#pragma once

#include <stdexcept>
#include <string>

namespace defectvit {

// Shapes of operands do not line up.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation (e.g. log of 0).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Caller broke a precondition that is not about shapes or values.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Well-formed input that violates the schema (unknown class, box out of
// bounds).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Optimization diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace defectvit

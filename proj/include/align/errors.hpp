#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace align {

/// Precondition or domain violation (invalid token, bad probability, support mismatch).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A table lookup whose key is absent.
struct KeyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Exact enumeration would exceed the configured trajectory budget.
struct BudgetError : std::length_error {
  using std::length_error::length_error;
};

/// Malformed or unresolvable experiment configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A loss or metric became non-finite. `step` is the iteration or round index.
struct NumericAbort : std::runtime_error {
  NumericAbort(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  std::size_t step;
};

}  // namespace align

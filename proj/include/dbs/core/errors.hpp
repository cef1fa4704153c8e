#pragma once

#include <stdexcept>
#include <string>

namespace dbs {

// Invalid argument values (NaN inputs, empty sets, bad ranges).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Numerical breakdown: failed factorizations, non-finite losses, divergence.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of an interface, e.g. asking a tuned surrogate for epistemic moments.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int numeric = 3;
}  // namespace exit_code

}  // namespace dbs

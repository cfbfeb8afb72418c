#pragma once

#include <stdexcept>
#include <string>

namespace gibrss {

// Violated precondition or invariant. The CLI maps this to exit code 1.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Shape mismatch between operands.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN/Inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read or written. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace gibrss

#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sea {

using Shape = std::vector<int64_t>;

// Base error; subclasses distinguish the failure class so callers can map
// them to exit codes / messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Tensor dimension mismatch.
struct ShapeError : Error {
  using Error::Error;
};
// Invalid configuration values (rejected before any compute).
struct ConfigError : Error {
  using Error::Error;
};
// Sparse matrix structural violation (offsets, ordering, bounds).
struct StructError : Error {
  using Error::Error;
};
// Numerical degeneracy (vanishing normalizer, non-finite values).
struct NumericError : Error {
  using Error::Error;
};
// API contract misuse (non-scalar loss, re-consumed tape, ...).
struct ContractError : Error {
  using Error::Error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

}  // namespace sea

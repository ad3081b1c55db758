#pragma once

#include <stdexcept>
#include <string>

namespace extrema_gp {

// Malformed input or violated precondition (CLI exit code 2).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Factorization failure, non-positive variance, flat curvature (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace extrema_gp

#pragma once

#include <stdexcept>
#include <string>

namespace reachlab {

// A caller broke an operation's precondition (dimensions, ranges, shapes).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Linear algebra or floating point breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A simulation or training run could not produce a usable result.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace reachlab

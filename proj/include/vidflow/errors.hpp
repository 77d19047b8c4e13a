#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vidflow {

/// A loss or an integration state stopped being finite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& where, std::size_t step, double value)
      : std::runtime_error(where + ": non-finite value " + std::to_string(value) + " at step " + std::to_string(step)),
        step_(step),
        value_(value) {}
  std::size_t step() const { return step_; }
  double value() const { return value_; }

 private:
  std::size_t step_;
  double value_;
};

/// A model trained in one mode was used for the other.
class ModeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace vidflow

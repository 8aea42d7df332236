#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltla {

/// Out-of-range index, dimension mismatch or malformed argument.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Input that fails a load-time invariant (stochasticity, shapes, JSON layout).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A token with zero probability under every reachable latent state.
class ImpossibleObservation : public std::runtime_error {
 public:
  explicit ImpossibleObservation(std::size_t token)
      : std::runtime_error("observation of token " + std::to_string(token) +
                           " has zero mass under the current belief"),
        token_(token) {}
  std::size_t token() const noexcept { return token_; }

 private:
  std::size_t token_;
};

/// An explicit size guard (materialization, enumeration, DFA states) was hit.
class SizeGuardError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Every candidate token has zero guided mass at a decode step.
class UnsatisfiableAtStep : public std::runtime_error {
 public:
  explicit UnsatisfiableAtStep(std::size_t step)
      : std::runtime_error("constraint unsatisfiable at decode step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// NaN/inf in a training loss or other unrecoverable numerical failure.
class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ltla

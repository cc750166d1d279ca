#pragma once

#include <stdexcept>
#include <string>

namespace mcascade {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the operation's domain (e.g. beta <= 1 for a limit functional).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A numerical routine failed: quadrature did not converge, bisection had no bracket.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Requested depth exceeds the configured memory cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// A sampled object cannot be used (nonpositive derivative martingale, empty
// Poisson sample). Callers are expected to discard and resample.
class DegenerateSample : public Error {
 public:
  using Error::Error;
};

}  // namespace mcascade

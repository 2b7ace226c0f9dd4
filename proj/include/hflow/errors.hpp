#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hflow {

// Parameters outside the admissible kernel/grid ranges.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Numerical procedure did not converge (quadrature refinement, factorization ladder).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QuadratureError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateKernelError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class FactorizationError : public NumericalError {
 public:
  FactorizationError(const std::string& what, std::size_t minor_index)
      : NumericalError(what + " (leading minor " + std::to_string(minor_index) + ")"),
        minor_index_(minor_index) {}

  std::size_t minor_index() const noexcept { return minor_index_; }

 private:
  std::size_t minor_index_;
};

// No trajectory in the simulated start window satisfies an inverse-flow query.
class WindowExhaustedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace hflow

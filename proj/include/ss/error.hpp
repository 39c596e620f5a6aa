#pragma once

#include <stdexcept>
#include <string>

namespace ss {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the lattice's covered hyper-rectangle.
class DomainError : public Error {
 public:
  DomainError(std::size_t coordinate, double value, double lo, double hi)
      : Error("input coordinate " + std::to_string(coordinate) + " = " + std::to_string(value) +
              " outside lattice domain [" + std::to_string(lo) + ", " + std::to_string(hi) + "]"),
        coordinate_(coordinate) {}

  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// Bad configuration or invalid argument; `field` names the offending config path when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string field = {})
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IntegrationBlowup : public NumericError {
 public:
  IntegrationBlowup(std::size_t step, double dt)
      : NumericError("non-finite state at step " + std::to_string(step) + " (dt = " +
                     std::to_string(dt) + "); reduce the time step"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class SingularBlock : public NumericError {
 public:
  using NumericError::NumericError;
};

class EstimatorUndefined : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ss

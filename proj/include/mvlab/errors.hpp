#pragma once

#include <stdexcept>
#include <string>

namespace mvlab {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Argument outside the documented domain (p < 1, u outside [0,1), ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A function produced a non-finite value where a finite one is required.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Negative perturbation applied where no matching mass exists.
class InvalidPerturbationError : public Error {
 public:
  using Error::Error;
};

// Mismatched grids / dimensions between containers.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input larger than a documented hard cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Missing data required by an operation's contract (event log, derivatives...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Simulation state became non-finite.
class NumericsError : public Error {
 public:
  using Error::Error;
};

// Population exceeded the configured hard cap; carries the model time reached.
class ExplosionError : public Error {
 public:
  ExplosionError(const std::string& what, double time_reached)
      : Error(what), time_reached_(time_reached) {}
  double time_reached() const { return time_reached_; }

 private:
  double time_reached_;
};

// Config file problems; carries the offending key or location when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace mvlab

#pragma once

#include <stdexcept>
#include <string>

namespace droope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A function argument lies outside the domain the law is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A parameter set violates one of its invariants.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Runtime failure during a time-domain run; carries the simulation time.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, double time_s)
      : Error(what + " (t = " + std::to_string(time_s) + " s)"), time_s_(time_s) {}
  double time_s() const { return time_s_; }

 private:
  double time_s_;
};

/// Malformed or inconsistent case file.
class CaseError : public Error {
 public:
  using Error::Error;
};

}  // namespace droope

#pragma once

#include <stdexcept>
#include <string>

namespace fvi {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value or derivative came out NaN/Inf.
struct NonFinite : Error {
  explicit NonFinite(const std::string& where)
      : Error("non-finite value in " + where) {}
};

// Velocity Hessian of the Lagrangian is numerically singular.
struct SingularMass : Error {
  double condition;
  explicit SingularMass(double cond)
      : Error("velocity Hessian singular or ill-conditioned (cond ~ " +
              std::to_string(cond) + ")"),
        condition(cond) {}
};

struct LegendreInversionFailed : Error {
  LegendreInversionFailed() : Error("Legendre transform inversion failed") {}
};

struct NewtonDiverged : Error {
  int iters;
  double residual;
  NewtonDiverged(int it, double res)
      : Error("Newton failed to converge after " + std::to_string(it) +
              " iterations (residual " + std::to_string(res) + ")"),
        iters(it),
        residual(res) {}
};

struct SingularD12 : Error {
  SingularD12() : Error("discrete Lagrangian is degenerate: D12 Ld singular") {}
};

struct StepTooSmall : Error {
  explicit StepTooSmall(double h)
      : Error("step size " + std::to_string(h) + " below 1e-13") {}
};

struct InnerSolveFailed : Error {
  double residual;
  explicit InnerSolveFailed(double res)
      : Error("interior stage solve failed (residual " + std::to_string(res) +
              ")"),
        residual(res) {}
};

// A retraction axiom check exceeded its tolerance.
struct ViolationFound : Error {
  std::string symbol;
  double magnitude;
  ViolationFound(std::string sym, double mag)
      : Error("retraction axiom violated: " + sym + " defect " +
              std::to_string(mag)),
        symbol(std::move(sym)),
        magnitude(mag) {}
};

struct BadMass : Error {
  explicit BadMass(const std::string& why) : Error("bad mass matrix: " + why) {}
};

struct GridMismatch : Error {
  GridMismatch() : Error("time grids do not match") {}
};

// Invalid user configuration (CLI / study specs). `field` names the offending
// entry as a dotted path.
struct ConfigError : Error {
  std::string field;
  ConfigError(std::string f, const std::string& why)
      : Error("config error at '" + f + "': " + why), field(std::move(f)) {}
};

}  // namespace fvi

#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "fvi/continuous.hpp"
#include "fvi/linalg.hpp"

namespace fvi {

// Quadrature data for Galerkin discretizations on [0, 1].
struct QuadratureScheme {
  int stages = 0;
  Vec nodes;    // strictly increasing, endpoints included for Lobatto
  Vec weights;  // positive, summing to one
  int poly_degree = 0;
};

// Lobatto nodes/weights, s in {2,3,4,5}; the induced Galerkin variational
// method has order 2s - 2.
QuadratureScheme lobatto_scheme(int s);

struct SolverConfig {
  double newton_tol = 1e-12;  // residual infinity-norm
  int max_iters = 50;
  enum class Jacobian { ExactAd } jacobian = Jacobian::ExactAd;
};

struct DiscretePair {
  Vec q_prev, q_curr;
  double h = 0.0;
};

// A discrete Lagrangian Ld(q0, q1, h) with exact first and second
// derivatives. `stages` is an optional in/out warm start for families with
// interior stage unknowns; others ignore it.
class DiscreteLagrangian {
 public:
  struct Derivs {
    double value = 0.0;
    Vec d1, d2;         // gradients in q0 / q1
    Mat d11, d12, d22;  // (d12)_{ij} = d2 Ld / dq0_i dq1_j
  };

  DiscreteLagrangian(LagrangianFn lag, int dim, int order)
      : lag_(std::move(lag)), dim_(dim), order_(order) {}
  virtual ~DiscreteLagrangian() = default;

  int dim() const { return dim_; }
  int design_order() const { return order_; }
  const LagrangianFn& continuous_lagrangian() const { return lag_; }

  virtual double eval(ConstSpan q0, ConstSpan q1, double h,
                      Vec* stages = nullptr) const = 0;
  virtual Derivs derivs(ConstSpan q0, ConstSpan q1, double h,
                        Vec* stages = nullptr) const = 0;

 protected:
  LagrangianFn lag_;
  int dim_;
  int order_;
};

// Ld(q0, q1) = h l((1-alpha) q0 + alpha q1, (q1 - q0)/h). Order 2 at the
// midpoint alpha = 1/2, order 1 otherwise.
class AlphaRuleLagrangian final : public DiscreteLagrangian {
 public:
  AlphaRuleLagrangian(LagrangianFn lag, int dim, double alpha);
  double alpha() const { return alpha_; }
  double eval(ConstSpan q0, ConstSpan q1, double h,
              Vec* stages = nullptr) const override;
  Derivs derivs(ConstSpan q0, ConstSpan q1, double h,
                Vec* stages = nullptr) const override;

 private:
  double alpha_;
};

// Galerkin discretization: the interval trajectory is the degree
// (s-1) polynomial through s control points at the Lobatto nodes and the
// action is the s-point Lobatto quadrature. Interior control points are
// eliminated per evaluation by stationarity (inner Newton); first
// derivatives use the envelope property, second derivatives add the
// implicit-function stage sensitivities.
class LobattoGalerkinLagrangian final : public DiscreteLagrangian {
 public:
  LobattoGalerkinLagrangian(LagrangianFn lag, int dim, int stages,
                            SolverConfig inner = {});
  const QuadratureScheme& scheme() const { return scheme_; }
  Vec solve_stages(ConstSpan q0, ConstSpan q1, double h,
                   Vec seed = {}) const;  // interior control points
  double eval(ConstSpan q0, ConstSpan q1, double h,
              Vec* stages = nullptr) const override;
  Derivs derivs(ConstSpan q0, ConstSpan q1, double h,
                Vec* stages = nullptr) const override;

 private:
  SecondOrder action_over(ConstSpan q0, ConstSpan q1, double h,
                          const Vec& theta, bool full) const;
  QuadratureScheme scheme_;
  Mat dmat_;  // nodal differentiation matrix on [0,1]
  SolverConfig inner_;
};

// Doubled discrete Lagrangian: the generic family machinery applied to the
// doubled Lagrangian (dimension 2n), plus the identity-restricted discrete
// force covectors extracted from the generalized-potential part.
class DoubledDiscreteLagrangian : public DiscreteLagrangian {
 public:
  DoubledDiscreteLagrangian(std::unique_ptr<DiscreteLagrangian> core,
                            ForcedSystem base)
      : DiscreteLagrangian(core->continuous_lagrangian(), core->dim(),
                           core->design_order()),
        core_(std::move(core)),
        base_(std::move(base)) {}

  const ForcedSystem& base_system() const { return base_; }

  double eval(ConstSpan q0, ConstSpan q1, double h,
              Vec* stages = nullptr) const override {
    return core_->eval(q0, q1, h, stages);
  }
  Derivs derivs(ConstSpan q0, ConstSpan q1, double h,
                Vec* stages = nullptr) const override {
    return core_->derivs(q0, q1, h, stages);
  }

  // (f-, f+) = identity-restricted (d/dq0, d/dq1) of the discretized
  // generalized potential, computed by AD. q0, q1 are single-system points.
  virtual std::pair<Vec, Vec> discrete_forces(ConstSpan q0, ConstSpan q1,
                                              double h) const = 0;

 protected:
  std::unique_ptr<DiscreteLagrangian> core_;
  ForcedSystem base_;
};

// ---- factories ----

std::unique_ptr<DiscreteLagrangian> alpha_rule(LagrangianFn lag, int dim,
                                               double alpha);
std::unique_ptr<DiscreteLagrangian> alpha_rule(const ForcedSystem& sys,
                                               double alpha);
std::unique_ptr<DoubledDiscreteLagrangian> alpha_rule(const DoubledSystem& dsys,
                                                      double alpha);

std::unique_ptr<DiscreteLagrangian> lobatto_galerkin(LagrangianFn lag, int dim,
                                                     int stages,
                                                     SolverConfig inner = {});
std::unique_ptr<DiscreteLagrangian> lobatto_galerkin(const ForcedSystem& sys,
                                                     int stages,
                                                     SolverConfig inner = {});
std::unique_ptr<DoubledDiscreteLagrangian> lobatto_galerkin(
    const DoubledSystem& dsys, int stages, SolverConfig inner = {});

std::pair<Vec, Vec> discrete_forces_from_K(const DoubledDiscreteLagrangian& ld,
                                           ConstSpan q0, ConstSpan q1,
                                           double h);

// ---- discrete flow ----

// Solves D1 Ld(q_curr, q_next) + D2 Ld(q_prev, q_curr) = 0 for q_next by
// Newton with the exact AD Jacobian, seeded at 2 q_curr - q_prev. Large
// steps may admit several DEL roots; the extrapolation seed selects the one
// continuing the chain, with no global search.
Vec del_step(const DiscreteLagrangian& ld, const DiscretePair& pair,
             const SolverConfig& cfg, int* iters = nullptr,
             Vec* stages = nullptr);

StateCotangent discrete_legendre_minus(const DiscreteLagrangian& ld,
                                       ConstSpan q0, ConstSpan q1, double h);
StateCotangent discrete_legendre_plus(const DiscreteLagrangian& ld,
                                      ConstSpan q0, ConstSpan q1, double h);

// Bridges continuous initial data: q1 solves FL^- Ld(q0, q1) = dl/dv(q0, v0).
// s0 lives in the discrete Lagrangian's own dimension.
DiscretePair initialize_from_state(const DiscreteLagrangian& ld,
                                   const StateTangent& s0, double h,
                                   const SolverConfig& cfg);

// Raw DEL chain in the discrete Lagrangian's own dimension. Records
// configurations and both discrete momenta.
TrajectoryRecord integrate_chain(const DiscreteLagrangian& ld,
                                 const StateTangent& s0, int n_steps, double h,
                                 const SolverConfig& cfg);

// Doubled run seeded on the identities from single-system initial data;
// records the physical (minus-copy) trajectory, per-step identity defect,
// physical momenta and energy.
TrajectoryRecord integrate(const DoubledDiscreteLagrangian& ld,
                           const StateTangent& s0, int n_steps, double h,
                           const SolverConfig& cfg);

// d(q1, p1)/d(q0, p0) of one discrete Hamiltonian map step, from the exact
// second derivatives of Ld by implicit differentiation.
Mat step_map_jacobian(const DiscreteLagrangian& ld, ConstSpan q0, ConstSpan p0,
                      double h, const SolverConfig& cfg);

// ---- single-system forced integrator (identity mode) ----

// The classical forced variational integrator built directly from the
// single-system discrete Lagrangian and explicit discrete forces. This is
// both the comparison side for the doubled construction and the fast path
// that solves on the identity submanifold directly.
class ForcedIntegrator {
 public:
  ForcedIntegrator(ForcedSystem sys, int order)
      : sys_(std::move(sys)), order_(order) {}
  virtual ~ForcedIntegrator() = default;

  int dim() const { return sys_.dim(); }
  int design_order() const { return order_; }
  const ForcedSystem& system() const { return sys_; }

  // Forced DEL residual D1 Ld + D2 Ld + f- + f+ for a configuration triple.
  virtual Vec residual(ConstSpan q_prev, ConstSpan q_curr, ConstSpan q_next,
                       double h) const = 0;
  virtual Vec step(ConstSpan q_prev, ConstSpan q_curr, double h,
                   const SolverConfig& cfg, int* iters = nullptr) const = 0;
  virtual Vec initialize(ConstSpan q0, ConstSpan p0, double h,
                         const SolverConfig& cfg) const = 0;
  // Boundary discrete force covectors (f-, f+) of one interval.
  virtual std::pair<Vec, Vec> boundary_forces(ConstSpan q0, ConstSpan q1,
                                              double h) const = 0;
  // Forced discrete Legendre transforms.
  virtual StateCotangent legendre_minus(ConstSpan q0, ConstSpan q1,
                                        double h) const = 0;
  virtual StateCotangent legendre_plus(ConstSpan q0, ConstSpan q1,
                                       double h) const = 0;

 protected:
  ForcedSystem sys_;
  int order_;
};

std::unique_ptr<ForcedIntegrator> forced_alpha_rule(const ForcedSystem& sys,
                                                    double alpha);
std::unique_ptr<ForcedIntegrator> forced_lobatto(const ForcedSystem& sys,
                                                 int stages);

TrajectoryRecord integrate(const ForcedIntegrator& fi, const StateTangent& s0,
                           int n_steps, double h, const SolverConfig& cfg);

}  // namespace fvi

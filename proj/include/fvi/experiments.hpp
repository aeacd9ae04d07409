#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fvi/discrete.hpp"

namespace fvi {

// Seedable generator with a documented stream: state advances by the
// SplitMix64 recurrence; uniform(a, b) maps the top 53 bits of each output
// into [a, b). Draw order is the order of the calls.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next();
  double uniform(double a, double b);
};

// Runs body(0..n-1) on up to FV_THREADS workers (hardware concurrency when
// unset). Each index writes only its own slot, so parallel and serial runs
// produce identical results.
void parallel_for(int n, const std::function<void(int)>& body);

enum class Family { Alpha, Lobatto };
enum class RunMode { Doubled, Identity };

struct IntegratorSpec {
  Family family = Family::Alpha;
  double alpha = 0.5;
  int stages = 3;
  RunMode mode = RunMode::Doubled;
  SolverConfig solver;

  std::string name() const;
  int design_order() const;
};

struct Benchmark {
  std::string name;
  ForcedSystem system;
  StateTangent initial;
  double t_end = 1.0;
  std::function<StateTangent(double)> exact;  // null when unavailable
};

Benchmark benchmark_damped_linear(const Mat& m, const Mat& d, const Mat& k);
Benchmark benchmark_damped_linear(double m, double d, double k);
Benchmark benchmark_van_der_pol(double eps = 0.5, double rho = 0.02,
                                double lambda = 0.8);

// One discrete trajectory under the given method (doubled chain or the
// identity-restricted fast path).
TrajectoryRecord run_trajectory(const ForcedSystem& sys,
                                const IntegratorSpec& spec,
                                const StateTangent& s0, int n_steps, double h);

enum class ReferenceKind { DoubledLobatto3, ClassicalRk5 };

struct LadderSpec {
  double h_min = 1e-3;
  double h_max = 0.25;
  int points = 8;
};

// Geometric ladder snapped so every h divides t_end into whole steps.
std::vector<double> geometric_ladder(const LadderSpec& spec, double t_end);

struct ConvergencePoint {
  double h = 0.0;
  double err_state = 0.0;
  double err_energy = 0.0;
  double max_identity_defect = 0.0;
  bool retained = false;  // above the roundoff floor and finite
  bool failed = false;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int retained = 0;
};

SlopeFit fit_loglog(const std::vector<ConvergencePoint>& pts, bool energy);

struct ConvergenceSpec {
  Benchmark benchmark;
  IntegratorSpec integrator;
  std::vector<double> ladder;  // empty: default LadderSpec
  double t_end = 0.0;          // <= 0: benchmark default
  ReferenceKind reference = ReferenceKind::DoubledLobatto3;
  double error_floor = 1e-11;
  StateTangent initial;  // empty: benchmark default
};

struct ConvergenceStudy {
  std::string method;
  int stages = 0;  // 0 for the alpha family
  std::vector<ConvergencePoint> points;
  SlopeFit state_fit, energy_fit;
  ReferenceKind reference = ReferenceKind::DoubledLobatto3;
  double reference_cross_defect = 0.0;
  double effective_floor = 0.0;
};

// Final-state errors against the reference over the ladder plus the log-log
// slope fit. The reference is cross-validated against the classical solver
// before any point runs; failed points are recorded, not fatal.
ConvergenceStudy run_convergence(const ConvergenceSpec& spec);

struct EnsembleSpec {
  Benchmark benchmark;
  IntegratorSpec integrator;
  int samples = 25;
  std::uint64_t seed = 1;
  double box_lo = -4.0;
  double box_hi = 4.0;
  bool sample_velocities = false;  // default: positions only
  std::vector<double> ladder;      // empty: 6 points in [2e-3, 0.2]
  double t_end = 0.0;
  double error_floor = 1e-11;
};

struct EnsembleSample {
  int id = 0;
  std::uint64_t seed = 0;
  StateTangent initial;
  std::vector<ConvergencePoint> points;
  SlopeFit fit;
  bool failed = false;
};

struct EnsembleStudy {
  std::vector<double> ladder;
  std::vector<EnsembleSample> samples;
  Vec mean_err, max_err, min_err;  // per ladder point, over samples
};

EnsembleStudy run_ensemble(const EnsembleSpec& spec);

struct EnergyErrorSeries {
  std::vector<double> t;
  Vec abs_err;
  double final_err = 0.0;
};

// |E_method(t) - E_reference(t)| on a shared grid.
EnergyErrorSeries energy_error_series(const TrajectoryRecord& rec,
                                      const TrajectoryRecord& reference);

// ---- output ----

std::string format_g17(double v);
void atomic_write(const std::string& path, const std::string& content);

std::string trajectory_csv(const TrajectoryRecord& rec, int dim,
                           bool wrap_output = false,
                           const Chart* chart = nullptr);
std::string convergence_csv(const std::vector<ConvergenceStudy>& studies);
std::string ensemble_csv(const EnsembleStudy& study);

}  // namespace fvi

#include "fvi/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace fvi {

std::uint64_t SplitMix64::next() {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform(double a, double b) {
  const double u01 =
      static_cast<double>(next() >> 11) * 0x1.0p-53;  // [0, 1)
  return a + (b - a) * u01;
}

void parallel_for(int n, const std::function<void(int)>& body) {
  int budget = static_cast<int>(std::thread::hardware_concurrency());
  if (budget < 1) budget = 1;
  if (const char* env = std::getenv("FV_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) budget = std::min(budget, cap);
  }
  budget = std::min(budget, n);
  if (budget <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next_index{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next_index.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(budget));
  for (int t = 0; t < budget; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string IntegratorSpec::name() const {
  if (family == Family::Lobatto) return "lobatto" + std::to_string(stages);
  if (std::abs(alpha - 0.5) < 1e-15) return "midpoint";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "alpha%g", alpha);
  return buf;
}

int IntegratorSpec::design_order() const {
  if (family == Family::Lobatto) return 2 * stages - 2;
  return std::abs(alpha - 0.5) < 1e-15 ? 2 : 1;
}

// ---- benchmarks ----

namespace {

bool is_diagonal(const Mat& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != 0.0) return false;
  return true;
}

void require_spd(const Mat& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-14)
        throw BadMass("mass matrix not symmetric");
  // Cholesky without pivoting doubles as the positivity check.
  Mat a = m;
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    double d = a(k, k);
    for (std::size_t j = 0; j < k; ++j) d -= a(k, j) * a(k, j);
    if (!(d > 0.0)) throw BadMass("mass matrix not positive definite");
    a(k, k) = std::sqrt(d);
    for (std::size_t i = k + 1; i < n; ++i) {
      double s = a(i, k);
      for (std::size_t j = 0; j < k; ++j) s -= a(i, j) * a(k, j);
      a(i, k) = s / a(k, k);
    }
  }
}

}  // namespace

Benchmark benchmark_damped_linear(const Mat& m, const Mat& d, const Mat& k) {
  require_spd(m);
  const int n = static_cast<int>(m.rows());
  Chart chart(n);
  Mat mc = m, dc = d, kc = k;
  LagrangianFn lag([mc, kc, n](auto q, auto v) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    T acc(0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t si = static_cast<std::size_t>(i);
        const std::size_t sj = static_cast<std::size_t>(j);
        acc += 0.5 * mc(si, sj) * v[si] * v[sj] -
               0.5 * kc(si, sj) * q[si] * q[sj];
      }
    return acc;
  });
  ForceFn force([dc, n](auto, auto v) {
    using T = std::remove_cvref_t<decltype(v[0])>;
    std::vector<T> f(static_cast<std::size_t>(n), T(0.0));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        f[static_cast<std::size_t>(i)] -=
            dc(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
            v[static_cast<std::size_t>(j)];
    return f;
  });

  Benchmark b;
  b.name = "damped_linear";
  b.system = ForcedSystem{chart, std::move(lag), std::move(force),
                          euclidean_retraction(chart)};
  b.initial = StateTangent{Vec(static_cast<std::size_t>(n), 1.0),
                           Vec(static_cast<std::size_t>(n), 0.0)};
  b.t_end = 1.0;

  // Mode-wise closed form for the simultaneously diagonal case.
  if (is_diagonal(m) && is_diagonal(d) && is_diagonal(k)) {
    bool ok = true;
    Vec delta(static_cast<std::size_t>(n)), omega(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
      const double mi = m(i, i);
      delta[i] = d(i, i) / (2.0 * mi);
      const double w2 = k(i, i) / mi - delta[i] * delta[i];
      if (!(w2 > 0.0)) ok = false;  // only the underdamped branch is coded
      omega[i] = std::sqrt(std::max(w2, 0.0));
    }
    if (ok) {
      StateTangent s0 = b.initial;
      b.exact = [delta, omega, s0](double t) {
        const std::size_t n2 = delta.size();
        StateTangent out{Vec(n2), Vec(n2)};
        for (std::size_t i = 0; i < n2; ++i) {
          const double de = delta[i], om = omega[i];
          const double a = s0.q[i];
          const double bb = (s0.v[i] + de * s0.q[i]) / om;
          const double e = std::exp(-de * t);
          out.q[i] = e * (a * std::cos(om * t) + bb * std::sin(om * t));
          out.v[i] = e * ((bb * om - a * de) * std::cos(om * t) -
                          (a * om + bb * de) * std::sin(om * t));
        }
        return out;
      };
    }
  }
  return b;
}

Benchmark benchmark_damped_linear(double m, double d, double k) {
  Mat mm(1, 1), dd(1, 1), kk(1, 1);
  mm(0, 0) = m;
  dd(0, 0) = d;
  kk(0, 0) = k;
  return benchmark_damped_linear(mm, dd, kk);
}

Benchmark benchmark_van_der_pol(double eps, double rho, double lambda) {
  Chart chart(2, {true, true});  // angle coordinates, wrapping on output only
  LagrangianFn lag([rho, lambda](auto q, auto v) {
    return 0.5 * (v[0] * v[0] + v[1] * v[1]) -
           0.5 * (q[0] * q[0] + (1.0 + rho) * q[1] * q[1]) -
           lambda * (q[0] - q[1]) * (q[0] - q[1]);
  });
  ForceFn force([eps](auto q, auto v) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    std::vector<T> f;
    f.reserve(2);
    f.push_back((eps - q[0] * q[0]) * v[0]);
    f.push_back((eps - q[1] * q[1]) * v[1]);
    return f;
  });
  Benchmark b;
  b.name = "van_der_pol";
  b.system = ForcedSystem{chart, std::move(lag), std::move(force),
                          euclidean_retraction(chart)};
  b.initial = StateTangent{{-0.5, -0.25}, {0.0, 4.0}};
  b.t_end = 1.0;
  return b;
}

TrajectoryRecord run_trajectory(const ForcedSystem& sys,
                                const IntegratorSpec& spec,
                                const StateTangent& s0, int n_steps,
                                double h) {
  if (spec.mode == RunMode::Identity) {
    auto fi = spec.family == Family::Alpha
                  ? forced_alpha_rule(sys, spec.alpha)
                  : forced_lobatto(sys, spec.stages);
    return integrate(*fi, s0, n_steps, h, spec.solver);
  }
  DoubledSystem dsys = make_doubled(sys);
  auto ld = spec.family == Family::Alpha
                ? alpha_rule(dsys, spec.alpha)
                : lobatto_galerkin(dsys, spec.stages, spec.solver);
  return integrate(*ld, s0, n_steps, h, spec.solver);
}

// ---- convergence ----

std::vector<double> geometric_ladder(const LadderSpec& spec, double t_end) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(spec.points));
  for (int i = 0; i < spec.points; ++i) {
    const double f = spec.points == 1
                         ? 0.0
                         : static_cast<double>(i) / (spec.points - 1);
    const double h =
        std::exp(std::log(spec.h_min) +
                 f * (std::log(spec.h_max) - std::log(spec.h_min)));
    const int n = std::max(1, static_cast<int>(std::llround(t_end / h)));
    out.push_back(t_end / n);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SlopeFit fit_loglog(const std::vector<ConvergencePoint>& pts, bool energy) {
  SlopeFit fit;
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : pts) {
    if (!p.retained) continue;
    const double e = energy ? p.err_energy : p.err_state;
    if (!(e > 0.0) || !std::isfinite(e)) continue;
    xy.emplace_back(std::log(p.h), std::log(e));
  }
  fit.retained = static_cast<int>(xy.size());
  if (xy.size() < 2) return fit;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (auto [x, y] : xy) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  const double n = static_cast<double>(xy.size());
  const double vxx = sxx - sx * sx / n;
  const double vxy = sxy - sx * sy / n;
  const double vyy = syy - sy * sy / n;
  fit.slope = vxy / vxx;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.r2 = vyy > 0.0 ? (vxy * vxy) / (vxx * vyy) : 1.0;
  return fit;
}

namespace {

struct ReferenceResult {
  Vec q, p;
  double e = 0.0;
  double cross_defect = 0.0;
};

ReferenceResult compute_reference(const ForcedSystem& sys,
                                  const StateTangent& s0, double t_end,
                                  double h_min, ReferenceKind kind,
                                  const SolverConfig& solver) {
  // Classical explicit reference, always computed for cross-validation.
  const double h_rk = std::min(1e-3, h_min);
  TrajectoryRecord rk = reference_solve(sys, s0, t_end, h_rk, {0.0, t_end});
  ReferenceResult out;
  if (kind == ReferenceKind::ClassicalRk5) {
    out.q = rk.q.back();
    out.p = rk.p.back();
    out.e = rk.energy.back();
    return out;
  }
  const double h_ref = h_min / 4.0;
  const int n_steps = std::max(1, static_cast<int>(std::llround(t_end / h_ref)));
  IntegratorSpec ref_spec;
  ref_spec.family = Family::Lobatto;
  ref_spec.stages = 3;
  ref_spec.mode = RunMode::Doubled;
  ref_spec.solver = solver;
  TrajectoryRecord rec =
      run_trajectory(sys, ref_spec, s0, n_steps, t_end / n_steps);
  out.q = rec.q.back();
  out.p = rec.p.back();
  out.e = rec.energy.back();
  double defect = 0.0;
  for (std::size_t i = 0; i < out.q.size(); ++i)
    defect = std::max({defect, std::abs(out.q[i] - rk.q.back()[i]),
                       std::abs(out.p[i] - rk.p.back()[i])});
  out.cross_defect = defect;
  if (!(defect < 1e-9))
    throw Error("reference cross-validation failed: defect " +
                std::to_string(defect));
  return out;
}

}  // namespace

ConvergenceStudy run_convergence(const ConvergenceSpec& spec) {
  const ForcedSystem& sys = spec.benchmark.system;
  const double t_end =
      spec.t_end > 0.0 ? spec.t_end : spec.benchmark.t_end;
  const StateTangent s0 =
      spec.initial.q.empty() ? spec.benchmark.initial : spec.initial;
  std::vector<double> ladder =
      spec.ladder.empty() ? geometric_ladder(LadderSpec{}, t_end) : spec.ladder;

  ConvergenceStudy study;
  study.method = spec.integrator.name();
  study.stages =
      spec.integrator.family == Family::Lobatto ? spec.integrator.stages : 0;
  study.reference = spec.reference;

  ReferenceResult ref =
      compute_reference(sys, s0, t_end, ladder.front(), spec.reference,
                        spec.integrator.solver);
  study.reference_cross_defect = ref.cross_defect;
  // Points at or below the reference's own accuracy measure noise, not the
  // method; the cross-validation defect calibrates that floor.
  const double floor =
      std::max(spec.error_floor, 4.0 * ref.cross_defect);
  study.effective_floor = floor;

  study.points.resize(ladder.size());
  parallel_for(static_cast<int>(ladder.size()), [&](int i) {
    const double h = ladder[static_cast<std::size_t>(i)];
    ConvergencePoint& pt = study.points[static_cast<std::size_t>(i)];
    pt.h = h;
    try {
      const int n_steps = static_cast<int>(std::llround(t_end / h));
      TrajectoryRecord rec =
          run_trajectory(sys, spec.integrator, s0, n_steps, h);
      double err = 0.0;
      for (std::size_t c = 0; c < ref.q.size(); ++c)
        err = std::max({err, std::abs(rec.q.back()[c] - ref.q[c]),
                        std::abs(rec.p.back()[c] - ref.p[c])});
      pt.err_state = err;
      pt.err_energy = std::abs(rec.energy.back() - ref.e);
      pt.max_identity_defect = rec.max_identity_defect();
      pt.retained = std::isfinite(err) && err >= floor;
    } catch (const std::exception&) {
      pt.failed = true;
      pt.err_state = std::numeric_limits<double>::quiet_NaN();
      pt.err_energy = std::numeric_limits<double>::quiet_NaN();
    }
  });

  study.state_fit = fit_loglog(study.points, false);
  study.energy_fit = fit_loglog(study.points, true);
  return study;
}

EnsembleStudy run_ensemble(const EnsembleSpec& spec) {
  const double t_end = spec.t_end > 0.0 ? spec.t_end : spec.benchmark.t_end;
  EnsembleStudy study;
  study.ladder = spec.ladder.empty()
                     ? geometric_ladder(LadderSpec{2e-3, 0.2, 6}, t_end)
                     : spec.ladder;

  // Per-sample seeds come from the master stream; per-sample draws from the
  // sample's own stream, positions first, then velocities when enabled.
  SplitMix64 master(spec.seed);
  const std::size_t n = spec.benchmark.initial.q.size();
  study.samples.resize(static_cast<std::size_t>(spec.samples));
  for (int k = 0; k < spec.samples; ++k) {
    EnsembleSample& s = study.samples[static_cast<std::size_t>(k)];
    s.id = k;
    s.seed = master.next();
    SplitMix64 rng(s.seed);
    s.initial = spec.benchmark.initial;
    for (std::size_t i = 0; i < n; ++i)
      s.initial.q[i] = rng.uniform(spec.box_lo, spec.box_hi);
    if (spec.sample_velocities)
      for (std::size_t i = 0; i < n; ++i)
        s.initial.v[i] = rng.uniform(spec.box_lo, spec.box_hi);
  }

  parallel_for(spec.samples, [&](int k) {
    EnsembleSample& s = study.samples[static_cast<std::size_t>(k)];
    ConvergenceSpec cs;
    cs.benchmark = spec.benchmark;
    cs.integrator = spec.integrator;
    cs.ladder = study.ladder;
    cs.t_end = t_end;
    cs.error_floor = spec.error_floor;
    cs.initial = s.initial;
    try {
      ConvergenceStudy c = run_convergence(cs);
      s.points = c.points;
      s.fit = c.state_fit;
    } catch (const std::exception&) {
      s.failed = true;
    }
  });

  const std::size_t np = study.ladder.size();
  study.mean_err.assign(np, 0.0);
  study.max_err.assign(np, 0.0);
  study.min_err.assign(np, std::numeric_limits<double>::infinity());
  Vec counts(np, 0.0);
  for (const auto& s : study.samples) {
    if (s.failed) continue;
    for (std::size_t i = 0; i < np; ++i) {
      const double e = s.points[i].err_state;
      if (!std::isfinite(e)) continue;
      study.mean_err[i] += e;
      study.max_err[i] = std::max(study.max_err[i], e);
      study.min_err[i] = std::min(study.min_err[i], e);
      counts[i] += 1.0;
    }
  }
  for (std::size_t i = 0; i < np; ++i)
    if (counts[i] > 0.0) study.mean_err[i] /= counts[i];
  return study;
}

EnergyErrorSeries energy_error_series(const TrajectoryRecord& rec,
                                      const TrajectoryRecord& reference) {
  if (rec.t.size() != reference.t.size()) throw GridMismatch();
  for (std::size_t i = 0; i < rec.t.size(); ++i)
    if (std::abs(rec.t[i] - reference.t[i]) > 1e-12 * (1.0 + rec.t[i]))
      throw GridMismatch();
  EnergyErrorSeries out;
  out.t = rec.t;
  out.abs_err.resize(rec.t.size());
  for (std::size_t i = 0; i < rec.t.size(); ++i)
    out.abs_err[i] = std::abs(rec.energy[i] - reference.energy[i]);
  out.final_err = out.abs_err.back();
  return out;
}

// ---- output ----

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string trajectory_csv(const TrajectoryRecord& rec, int dim,
                           bool wrap_output, const Chart* chart) {
  std::string s = "t";
  for (int i = 0; i < dim; ++i) s += ",q" + std::to_string(i);
  for (int i = 0; i < dim; ++i) s += ",p" + std::to_string(i);
  s += ",E,identity_defect,newton_iters\n";
  for (std::size_t k = 0; k < rec.t.size(); ++k) {
    s += format_g17(rec.t[k]);
    Vec q = rec.q[k];
    if (wrap_output && chart) q = chart->wrap(q);
    for (double x : q) s += "," + format_g17(x);
    for (double x : rec.p[k]) s += "," + format_g17(x);
    s += "," + format_g17(rec.energy.empty() ? 0.0 : rec.energy[k]);
    s += "," + format_g17(rec.identity_defect.empty() ? 0.0
                                                      : rec.identity_defect[k]);
    s += "," + std::to_string(rec.newton_iters.empty() ? 0
                                                       : rec.newton_iters[k]);
    s += "\n";
  }
  return s;
}

std::string convergence_csv(const std::vector<ConvergenceStudy>& studies) {
  std::string s = "method,stages,h,err_state_inf,err_energy,slope_window_flag\n";
  for (const auto& st : studies)
    for (const auto& p : st.points) {
      s += st.method + "," + std::to_string(st.stages) + "," + format_g17(p.h) +
           "," + format_g17(p.err_state) + "," + format_g17(p.err_energy) +
           "," + (p.retained ? "1" : "0") + "\n";
    }
  return s;
}

std::string ensemble_csv(const EnsembleStudy& study) {
  std::string s = "sample_id,seed,h,err_state_inf,err_energy\n";
  for (const auto& sample : study.samples)
    for (const auto& p : sample.points) {
      s += std::to_string(sample.id) + "," + std::to_string(sample.seed) +
           "," + format_g17(p.h) + "," + format_g17(p.err_state) + "," +
           format_g17(p.err_energy) + "\n";
    }
  return s;
}

}  // namespace fvi

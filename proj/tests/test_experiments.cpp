#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fvi/experiments.hpp"
#include "oracles.hpp"

using namespace fvi;

TEST_CASE("splitmix64 stream is deterministic and in range") {
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform(-4.0, 4.0);
    CHECK(x == b.uniform(-4.0, 4.0));
    CHECK(x >= -4.0);
    CHECK(x < 4.0);
  }
  SplitMix64 c(43);
  CHECK(c.next() != SplitMix64(42).next());
}

TEST_CASE("geometric ladder divides t_end into whole steps") {
  std::vector<double> ladder = geometric_ladder(LadderSpec{}, 1.0);
  CHECK(ladder.size() >= 4);
  CHECK(ladder.back() / ladder.front() >= 100.0);  // two decades
  for (double h : ladder) {
    const double n = 1.0 / h;
    CHECK(std::abs(n - std::llround(n)) < 1e-9);
  }
  for (std::size_t i = 1; i < ladder.size(); ++i)
    CHECK(ladder[i] > ladder[i - 1]);
}

TEST_CASE("slope fit recovers an exact power law") {
  std::vector<ConvergencePoint> pts;
  for (double h : {0.01, 0.02, 0.04, 0.08, 0.16}) {
    ConvergencePoint p;
    p.h = h;
    p.err_state = 3.0 * h * h * h;
    p.err_energy = 0.5 * h * h;
    p.retained = true;
    pts.push_back(p);
  }
  SlopeFit fs = fit_loglog(pts, false);
  CHECK(fs.slope == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fs.r2 == doctest::Approx(1.0));
  CHECK(fs.retained == 5);
  SlopeFit fe = fit_loglog(pts, true);
  CHECK(fe.slope == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("damped linear benchmark: mass checks and closed form") {
  CHECK_THROWS_AS(benchmark_damped_linear(-1.0, 0.0, 1.0), BadMass);
  Mat bad(2, 2);
  bad(0, 1) = 1.0;  // not symmetric
  CHECK_THROWS_AS(
      benchmark_damped_linear(bad, Mat(2, 2), Mat::identity(2)), BadMass);

  Benchmark b = benchmark_damped_linear(1.0, 0.2, 1.0);
  REQUIRE(bool(b.exact));
  const double om = std::sqrt(0.99);
  StateTangent s = b.exact(1.0);
  CHECK(s.q[0] == doctest::Approx(std::exp(-0.1) * (std::cos(om) +
                                                    0.1 / om * std::sin(om)))
                      .epsilon(1e-14));

  // The reference integrator agrees with the closed form.
  TrajectoryRecord rec =
      reference_solve(b.system, b.initial, 1.0, 1e-4, {0.0, 1.0});
  CHECK(std::abs(rec.q.back()[0] - s.q[0]) < 1e-8);

  // Harmonic limit conserves energy along the reference.
  Benchmark ho = benchmark_damped_linear(1.0, 0.0, 1.0);
  TrajectoryRecord hrec =
      reference_solve(ho.system, ho.initial, 1.0, 1e-3);
  for (double e : hrec.energy)
    CHECK(e == doctest::Approx(hrec.energy.front()).epsilon(1e-8));
}

TEST_CASE("van der Pol benchmark: paper defaults and scalar limit") {
  Benchmark b = benchmark_van_der_pol();
  CHECK(b.initial.q[0] == -0.5);
  CHECK(b.initial.q[1] == -0.25);
  CHECK(b.initial.v[0] == 0.0);
  CHECK(b.initial.v[1] == 4.0);
  CHECK(b.t_end == 1.0);
  CHECK(energy(b.system, b.initial) == doctest::Approx(8.206875));

  // Uncoupled single-oscillator limit obeys qdd - (eps - q^2) qd + q = 0.
  Benchmark single = benchmark_van_der_pol(0.5, 0.0, 0.0);
  StateTangent s0{{1.2, 0.0}, {-0.3, 0.0}};
  TrajectoryRecord rec = reference_solve(single.system, s0, 1.0, 1e-3);
  for (std::size_t k = 0; k < rec.size(); k += 100) {
    const double q = rec.q[k][0], v = rec.v[k][0];
    Vec a = forced_el_acceleration(single.system, {rec.q[k], rec.v[k]});
    CHECK(std::abs(a[0] - ((0.5 - q * q) * v - q)) < 1e-8);
    CHECK(std::abs(rec.q[k][1]) < 1e-9);  // second oscillator stays put
  }
}

TEST_CASE("convergence study on the damped linear benchmark") {
  ConvergenceSpec cs;
  cs.benchmark = benchmark_damped_linear(1.0, 0.2, 1.0);
  cs.integrator.family = Family::Alpha;
  cs.integrator.alpha = 0.5;
  cs.ladder = geometric_ladder(LadderSpec{2e-3, 0.128, 5}, 1.0);
  ConvergenceStudy st = run_convergence(cs);
  CHECK(st.method == "midpoint");
  CHECK(st.state_fit.slope == doctest::Approx(2.0).epsilon(0.05));
  CHECK(st.state_fit.r2 >= 0.99);
  CHECK(st.state_fit.retained >= 4);
  CHECK(std::abs(st.energy_fit.slope - st.state_fit.slope) <= 0.3);
  for (const auto& p : st.points) CHECK(p.max_identity_defect < 1e-9);

  // F = 0 sanity: the forced machinery on the unforced oscillator.
  ConvergenceSpec hs = cs;
  hs.benchmark = benchmark_damped_linear(1.0, 0.0, 1.0);
  ConvergenceStudy hst = run_convergence(hs);
  CHECK(hst.state_fit.slope == doctest::Approx(2.0).epsilon(0.05));

  // The classical reference gives the same story.
  ConvergenceSpec rs = cs;
  rs.reference = ReferenceKind::ClassicalRk5;
  ConvergenceStudy rst = run_convergence(rs);
  CHECK(rst.state_fit.slope == doctest::Approx(2.0).epsilon(0.05));
  CHECK(rst.reference_cross_defect == 0.0);
}

TEST_CASE("halving h reduces the midpoint error by about four") {
  Benchmark b = benchmark_van_der_pol();
  IntegratorSpec spec;  // midpoint doubled
  TrajectoryRecord ref =
      reference_solve(b.system, b.initial, 1.0, 2.5e-4, {0.0, 1.0});
  auto final_err = [&](double h) {
    TrajectoryRecord rec = run_trajectory(b.system, spec, b.initial,
                                          static_cast<int>(1.0 / h), h);
    double e = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      e = std::max({e, std::abs(rec.q.back()[i] - ref.q.back()[i]),
                    std::abs(rec.p.back()[i] - ref.p.back()[i])});
    return e;
  };
  const double ratio = final_err(0.01) / final_err(0.005);
  CHECK(ratio > 4.0 / 1.5);
  CHECK(ratio < 4.0 * 1.5);
}

TEST_CASE("energy error series and the Richardson ratio") {
  Benchmark b = benchmark_van_der_pol();
  IntegratorSpec spec;
  std::vector<double> grid = uniform_grid(1.0, 0.01);
  TrajectoryRecord ref =
      reference_solve(b.system, b.initial, 1.0, 2.5e-4, grid);
  TrajectoryRecord coarse = run_trajectory(b.system, spec, b.initial, 100, 0.01);
  EnergyErrorSeries self = energy_error_series(coarse, coarse);
  CHECK(self.final_err == 0.0);
  EnergyErrorSeries es = energy_error_series(coarse, ref);

  TrajectoryRecord fine = run_trajectory(b.system, spec, b.initial, 200, 0.005);
  TrajectoryRecord ref_fine =
      reference_solve(b.system, b.initial, 1.0, 2.5e-4, uniform_grid(1.0, 0.005));
  EnergyErrorSeries ef = energy_error_series(fine, ref_fine);
  const double ratio = es.final_err / ef.final_err;
  CHECK(ratio > 4.0 / 1.6);
  CHECK(ratio < 4.0 * 1.6);

  CHECK_THROWS_AS(energy_error_series(coarse, fine), GridMismatch);
}

TEST_CASE("small ensemble is deterministic and ordered") {
  EnsembleSpec es;
  es.benchmark = benchmark_damped_linear(1.0, 0.2, 1.0);
  es.integrator.family = Family::Alpha;
  es.integrator.alpha = 0.5;
  es.samples = 4;
  es.seed = 7;
  es.ladder = geometric_ladder(LadderSpec{4e-3, 0.1, 4}, 1.0);
  EnsembleStudy a = run_ensemble(es);
  EnsembleStudy bst = run_ensemble(es);
  REQUIRE(a.samples.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(a.samples[k].seed == bst.samples[k].seed);
    for (std::size_t i = 0; i < a.ladder.size(); ++i)
      CHECK(a.samples[k].points[i].err_state ==
            bst.samples[k].points[i].err_state);
    // velocities stay at the benchmark default when not sampled
    CHECK(a.samples[k].initial.v[0] == es.benchmark.initial.v[0]);
    CHECK(a.samples[k].initial.q[0] >= -4.0);
    CHECK(a.samples[k].initial.q[0] <= 4.0);
  }
  for (std::size_t i = 0; i < a.ladder.size(); ++i) {
    CHECK(a.max_err[i] >= a.mean_err[i]);
    CHECK(a.mean_err[i] >= a.min_err[i]);
  }
  CHECK(ensemble_csv(a) == ensemble_csv(bst));

  EnsembleSpec vs = es;
  vs.sample_velocities = true;
  EnsembleStudy v = run_ensemble(vs);
  CHECK(v.samples[0].initial.v[0] != es.benchmark.initial.v[0]);
}

TEST_CASE("csv schemas") {
  ConvergenceStudy st;
  st.method = "midpoint";
  st.stages = 0;
  ConvergencePoint p;
  p.h = 0.1;
  p.err_state = 1e-3;
  p.err_energy = 2e-3;
  p.retained = true;
  st.points.push_back(p);
  std::string csv = convergence_csv({st});
  CHECK(csv.substr(0, csv.find('\n')) ==
        "method,stages,h,err_state_inf,err_energy,slope_window_flag");
  CHECK(csv.find("midpoint,0,0.10000000000000001,0.001") != std::string::npos);

  EnsembleStudy es;
  EnsembleSample sm;
  sm.id = 3;
  sm.seed = 99;
  sm.points.push_back(p);
  es.samples.push_back(sm);
  es.ladder = {0.1};
  std::string ecsv = ensemble_csv(es);
  CHECK(ecsv.substr(0, ecsv.find('\n')) ==
        "sample_id,seed,h,err_state_inf,err_energy");
  CHECK(ecsv.find("3,99,") != std::string::npos);

  TrajectoryRecord rec;
  rec.t = {0.0};
  rec.q = {{1.0, 2.0}};
  rec.p = {{3.0, 4.0}};
  rec.energy = {5.0};
  rec.identity_defect = {0.0};
  rec.newton_iters = {2};
  std::string tcsv = trajectory_csv(rec, 2);
  CHECK(tcsv.substr(0, tcsv.find('\n')) ==
        "t,q0,q1,p0,p1,E,identity_defect,newton_iters");

  // 17 significant digits round-trip exactly.
  const double v = 0.1 + 0.2;
  CHECK(std::stod(format_g17(v)) == v);
}

TEST_CASE("atomic write replaces content") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "fvi_atomic_test.csv").string();
  atomic_write(path, "a,b\n1,2\n");
  atomic_write(path, "a,b\n3,4\n");
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  CHECK(content == "a,b\n3,4\n");
  fs::remove(path);
  CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("van der Pol ensemble keeps fourth-order slopes across the box") {
  EnsembleSpec es;
  es.benchmark = benchmark_van_der_pol();
  es.integrator.family = Family::Lobatto;
  es.integrator.stages = 3;
  es.seed = 20240601;
  EnsembleStudy st = run_ensemble(es);
  REQUIRE(st.samples.size() == 25);
  for (const auto& s : st.samples) {
    REQUIRE(!s.failed);
    CHECK(s.fit.slope > 3.7);
    CHECK(s.fit.slope < 4.3);
    double defect = 0.0;
    for (const auto& p : s.points)
      defect = std::max(defect, p.max_identity_defect);
    CHECK(defect < 1e-9);
  }
  for (std::size_t i = 0; i < st.ladder.size(); ++i) {
    CHECK(st.max_err[i] >= st.mean_err[i]);
    CHECK(st.mean_err[i] >= st.min_err[i]);
  }
}

TEST_CASE("parallel and serial execution produce identical results") {
  EnsembleSpec es;
  es.benchmark = benchmark_damped_linear(1.0, 0.2, 1.0);
  es.integrator.family = Family::Alpha;
  es.samples = 3;
  es.seed = 11;
  es.ladder = geometric_ladder(LadderSpec{0.01, 0.1, 3}, 1.0);
  setenv("FV_THREADS", "1", 1);
  EnsembleStudy serial = run_ensemble(es);
  setenv("FV_THREADS", "3", 1);
  EnsembleStudy parallel = run_ensemble(es);
  unsetenv("FV_THREADS");
  CHECK(ensemble_csv(serial) == ensemble_csv(parallel));
}

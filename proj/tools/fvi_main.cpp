// Command-line front end: simulate | converge | ensemble | plot.
// Exit codes: 0 ok, 2 usage/config error, 3 numerical failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "fvi/experiments.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fvi;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw ConfigError(field, why);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) bad(path.empty() ? key : path + "." + key, "unknown key");
  }
}

double num_at(const json& obj, const std::string& path, const char* key,
              double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) bad(path + "." + key, "must be a number");
  return obj[key].get<double>();
}

Vec vec_at(const json& obj, const std::string& path, const char* key,
           Vec fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_array()) bad(path + "." + key, "must be an array");
  Vec out;
  for (const auto& v : obj[key]) {
    if (!v.is_number()) bad(path + "." + key, "entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

struct RunConfig {
  Benchmark benchmark;
  IntegratorSpec integrator;
  double h = 0.01;
  double t_end = 1.0;
  LadderSpec ladder;
  ReferenceKind reference = ReferenceKind::DoubledLobatto3;
  int samples = 25;
  double box_lo = -4.0, box_hi = 4.0;
  bool sample_velocities = false;
  std::uint64_t seed = 1;
  bool wrap_output = false;
  bool ladder_given = false;
};

Benchmark parse_benchmark(const json& b) {
  check_keys(b, "benchmark",
             {"name", "epsilon", "rho", "lambda", "mass", "damping",
              "stiffness", "q0", "v0"});
  const std::string name = b.contains("name") ? b["name"].get<std::string>()
                                              : std::string("van_der_pol");
  Benchmark bench;
  if (name == "van_der_pol") {
    for (const char* key : {"mass", "damping", "stiffness"})
      if (b.contains(key)) bad(std::string("benchmark.") + key,
                               "not a van_der_pol parameter");
    bench = benchmark_van_der_pol(num_at(b, "benchmark", "epsilon", 0.5),
                                  num_at(b, "benchmark", "rho", 0.02),
                                  num_at(b, "benchmark", "lambda", 0.8));
  } else if (name == "damped_linear") {
    for (const char* key : {"epsilon", "rho", "lambda"})
      if (b.contains(key)) bad(std::string("benchmark.") + key,
                               "not a damped_linear parameter");
    Vec m = vec_at(b, "benchmark", "mass", {1.0});
    Vec d = vec_at(b, "benchmark", "damping", Vec(m.size(), 0.2));
    Vec k = vec_at(b, "benchmark", "stiffness", Vec(m.size(), 1.0));
    if (d.size() != m.size() || k.size() != m.size())
      bad("benchmark.damping", "diagonal lengths must match mass");
    const std::size_t n = m.size();
    Mat mm(n, n), dd(n, n), kk(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      mm(i, i) = m[i];
      dd(i, i) = d[i];
      kk(i, i) = k[i];
    }
    try {
      bench = benchmark_damped_linear(mm, dd, kk);
    } catch (const BadMass& e) {
      bad("benchmark.mass", e.what());
    }
  } else {
    bad("benchmark.name", "must be van_der_pol or damped_linear");
  }
  Vec q0 = vec_at(b, "benchmark", "q0", bench.initial.q);
  Vec v0 = vec_at(b, "benchmark", "v0", bench.initial.v);
  const std::size_t n = static_cast<std::size_t>(bench.system.dim());
  if (q0.size() != n) bad("benchmark.q0", "length must match the dimension");
  if (v0.size() != n) bad("benchmark.v0", "length must match the dimension");
  bench.initial = {std::move(q0), std::move(v0)};
  return bench;
}

RunConfig parse_config(const std::string& path, std::uint64_t seed_override,
                       bool seed_given) {
  json root = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) bad("--config", "cannot read " + path);
    try {
      in >> root;
    } catch (const json::exception& e) {
      bad("--config", std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) bad("--config", "top level must be an object");
  }
  check_keys(root, "", {"benchmark", "integrator", "h", "t_end", "ladder",
                        "reference", "ensemble", "solver", "seed",
                        "wrap_output"});
  RunConfig cfg;
  cfg.benchmark = parse_benchmark(
      root.contains("benchmark") ? root["benchmark"] : json::object());

  const json integ =
      root.contains("integrator") ? root["integrator"] : json::object();
  check_keys(integ, "integrator", {"family", "alpha", "stages", "mode"});
  const std::string family =
      integ.contains("family") ? integ["family"].get<std::string>()
                               : std::string("alpha");
  if (family == "alpha") {
    cfg.integrator.family = Family::Alpha;
  } else if (family == "lobatto") {
    cfg.integrator.family = Family::Lobatto;
  } else {
    bad("integrator.family", "must be alpha or lobatto");
  }
  cfg.integrator.alpha = num_at(integ, "integrator", "alpha", 0.5);
  if (cfg.integrator.alpha < 0.0 || cfg.integrator.alpha > 1.0)
    bad("integrator.alpha", "must lie in [0, 1]");
  const double stages = num_at(integ, "integrator", "stages", 3);
  cfg.integrator.stages = static_cast<int>(stages);
  if (cfg.integrator.family == Family::Lobatto &&
      (cfg.integrator.stages < 2 || cfg.integrator.stages > 5 ||
       stages != cfg.integrator.stages))
    bad("integrator.stages", "stages must be in 2..5");
  const std::string mode = integ.contains("mode")
                               ? integ["mode"].get<std::string>()
                               : std::string("doubled");
  if (mode == "doubled") {
    cfg.integrator.mode = RunMode::Doubled;
  } else if (mode == "identity") {
    cfg.integrator.mode = RunMode::Identity;
  } else {
    bad("integrator.mode", "must be doubled or identity");
  }

  cfg.h = num_at(root, "", "h", 0.01);
  if (!(cfg.h > 0.0)) bad("h", "must be positive");
  cfg.t_end = num_at(root, "", "t_end", 1.0);
  if (!(cfg.t_end > 0.0)) bad("t_end", "must be positive");

  cfg.ladder_given = root.contains("ladder");
  const json ladder = root.contains("ladder") ? root["ladder"] : json::object();
  check_keys(ladder, "ladder", {"h_min", "h_max", "points"});
  cfg.ladder.h_min = num_at(ladder, "ladder", "h_min", 1e-3);
  cfg.ladder.h_max = num_at(ladder, "ladder", "h_max", 0.25);
  cfg.ladder.points = static_cast<int>(num_at(ladder, "ladder", "points", 8));
  if (!(cfg.ladder.h_min > 0.0) || cfg.ladder.h_max <= cfg.ladder.h_min)
    bad("ladder.h_min", "need 0 < h_min < h_max");
  if (cfg.ladder.points < 2) bad("ladder.points", "need at least 2 points");

  if (root.contains("reference")) {
    const std::string r = root["reference"].get<std::string>();
    if (r == "doubled_lobatto3") {
      cfg.reference = ReferenceKind::DoubledLobatto3;
    } else if (r == "rk5") {
      cfg.reference = ReferenceKind::ClassicalRk5;
    } else {
      bad("reference", "must be doubled_lobatto3 or rk5");
    }
  }

  const json ens = root.contains("ensemble") ? root["ensemble"] : json::object();
  check_keys(ens, "ensemble", {"samples", "box", "sample_velocities"});
  cfg.samples = static_cast<int>(num_at(ens, "ensemble", "samples", 25));
  if (cfg.samples < 1) bad("ensemble.samples", "must be at least 1");
  Vec box = vec_at(ens, "ensemble", "box", {-4.0, 4.0});
  if (box.size() != 2 || box[0] >= box[1])
    bad("ensemble.box", "must be [lo, hi] with lo < hi");
  cfg.box_lo = box[0];
  cfg.box_hi = box[1];
  if (ens.contains("sample_velocities")) {
    if (!ens["sample_velocities"].is_boolean())
      bad("ensemble.sample_velocities", "must be a boolean");
    cfg.sample_velocities = ens["sample_velocities"].get<bool>();
  }

  const json solver = root.contains("solver") ? root["solver"] : json::object();
  check_keys(solver, "solver", {"newton_tol", "max_iters"});
  cfg.integrator.solver.newton_tol =
      num_at(solver, "solver", "newton_tol", 1e-12);
  if (cfg.integrator.solver.newton_tol <= 2.3e-15)
    bad("solver.newton_tol", "must exceed 10x machine epsilon");
  cfg.integrator.solver.max_iters =
      static_cast<int>(num_at(solver, "solver", "max_iters", 50));
  if (cfg.integrator.solver.max_iters < 1)
    bad("solver.max_iters", "must be at least 1");

  if (root.contains("seed")) {
    if (!root["seed"].is_number_unsigned() && !root["seed"].is_number_integer())
      bad("seed", "must be a non-negative integer");
    cfg.seed = root["seed"].get<std::uint64_t>();
  }
  if (seed_given) cfg.seed = seed_override;

  if (root.contains("wrap_output")) {
    if (!root["wrap_output"].is_boolean()) bad("wrap_output", "must be a boolean");
    cfg.wrap_output = root["wrap_output"].get<bool>();
  }
  return cfg;
}

std::string vec_str(const Vec& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? ", " : "") + format_g17(v[i]);
  return s + ")";
}

int cmd_simulate(const RunConfig& cfg, const std::string& out, bool quiet) {
  const int n_steps =
      std::max(1, static_cast<int>(std::llround(cfg.t_end / cfg.h)));
  TrajectoryRecord rec = run_trajectory(cfg.benchmark.system, cfg.integrator,
                                        cfg.benchmark.initial, n_steps, cfg.h);
  fs::create_directories(out);
  atomic_write((fs::path(out) / "trajectory.csv").string(),
               trajectory_csv(rec, cfg.benchmark.system.dim(), cfg.wrap_output,
                              &cfg.benchmark.system.chart));
  if (!quiet) {
    std::cout << "steps=" << n_steps << " final_q=" << vec_str(rec.q.back())
              << " final_p=" << vec_str(rec.p.back())
              << " E=" << format_g17(rec.energy.back())
              << " max_identity_defect="
              << format_g17(rec.max_identity_defect())
              << " newton_iters=" << rec.total_newton_iters << "\n";
  }
  return 0;
}

int cmd_converge(const RunConfig& cfg, const std::string& out, bool quiet) {
  ConvergenceSpec spec;
  spec.benchmark = cfg.benchmark;
  spec.integrator = cfg.integrator;
  spec.ladder = geometric_ladder(cfg.ladder, cfg.t_end);
  spec.t_end = cfg.t_end;
  spec.reference = cfg.reference;
  ConvergenceStudy study = run_convergence(spec);
  fs::create_directories(out);
  atomic_write((fs::path(out) / "convergence.csv").string(),
               convergence_csv({study}));
  if (!quiet) {
    std::cout << "method=" << study.method
              << " slope=" << format_g17(study.state_fit.slope)
              << " r2=" << format_g17(study.state_fit.r2) << "\n";
  }
  return 0;
}

int cmd_ensemble(const RunConfig& cfg, const std::string& out, bool quiet) {
  EnsembleSpec spec;
  spec.benchmark = cfg.benchmark;
  spec.integrator = cfg.integrator;
  spec.samples = cfg.samples;
  spec.seed = cfg.seed;
  spec.box_lo = cfg.box_lo;
  spec.box_hi = cfg.box_hi;
  spec.sample_velocities = cfg.sample_velocities;
  spec.t_end = cfg.t_end;
  if (cfg.ladder_given) spec.ladder = geometric_ladder(cfg.ladder, cfg.t_end);
  EnsembleStudy study = run_ensemble(spec);
  fs::create_directories(out);
  atomic_write((fs::path(out) / "ensemble.csv").string(), ensemble_csv(study));
  if (!quiet) {
    int failed = 0;
    for (const auto& s : study.samples) failed += s.failed ? 1 : 0;
    std::cout << "samples=" << study.samples.size() << " failed=" << failed
              << " ladder_points=" << study.ladder.size() << "\n";
  }
  return 0;
}

// ---- plot ----

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad(path, "missing file");
  CsvTable t;
  t.path = path;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) bad(path, "empty file");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  if (t.rows.empty()) bad(path, "no data rows");
  return t;
}

std::string py_list(const CsvTable& t, const char* col) {
  std::size_t idx = t.header.size();
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == col) idx = i;
  if (idx == t.header.size()) bad(t.path, std::string("no column ") + col);
  std::string s = "[";
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    s += (r ? "," : "") + t.rows[r][idx];
  return s + "]";
}

std::string py_str_list(const CsvTable& t, const char* col) {
  std::size_t idx = t.header.size();
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == col) idx = i;
  if (idx == t.header.size()) bad(t.path, std::string("no column ") + col);
  std::string s = "[";
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    s += (r ? ",\"" : "\"") + t.rows[r][idx] + "\"";
  return s + "]";
}

int cmd_plot(const std::vector<std::string>& paths, const std::string& out,
             bool quiet) {
  std::vector<CsvTable> conv, ens, traj;
  for (const std::string& p : paths) {
    CsvTable t = read_csv(p);
    if (!t.header.empty() && t.header[0] == "method") {
      conv.push_back(std::move(t));
    } else if (!t.header.empty() && t.header[0] == "sample_id") {
      ens.push_back(std::move(t));
    } else if (!t.header.empty() && t.header[0] == "t") {
      traj.push_back(std::move(t));
    } else {
      bad(p, "unrecognized CSV schema");
    }
  }

  std::string py;
  py += "#!/usr/bin/env python3\n";
  py += "# Generated plot script; self-contained (data embedded).\n";
  py += "import matplotlib\nmatplotlib.use(\"Agg\")\n";
  py += "import matplotlib.pyplot as plt\nimport os\n";
  py += "here = os.path.dirname(os.path.abspath(__file__))\n\n";

  int idx = 0;
  std::string conv_blocks, ens_blocks, traj_blocks;
  for (const CsvTable& t : conv) {
    const std::string v = "c" + std::to_string(idx++);
    py += v + "_method = " + py_str_list(t, "method") + "\n";
    py += v + "_h = " + py_list(t, "h") + "\n";
    py += v + "_err = " + py_list(t, "err_state_inf") + "\n";
    py += v + "_errE = " + py_list(t, "err_energy") + "\n";
    conv_blocks += "series(" + v + "_method, " + v + "_h, " + v + "_err, " +
                   v + "_errE)\n";
  }
  for (const CsvTable& t : ens) {
    const std::string v = "e" + std::to_string(idx++);
    py += v + "_h = " + py_list(t, "h") + "\n";
    py += v + "_err = " + py_list(t, "err_state_inf") + "\n";
    py += v + "_errE = " + py_list(t, "err_energy") + "\n";
    ens_blocks += "ensemble(" + v + "_h, " + v + "_err, " + v + "_errE)\n";
  }
  for (const CsvTable& t : traj) {
    const std::string v = "t" + std::to_string(idx++);
    py += v + "_t = " + py_list(t, "t") + "\n";
    std::string qcols;
    for (const std::string& col : t.header)
      if (col.size() >= 2 && col[0] == 'q') {
        py += v + "_" + col + " = " + py_list(t, col.c_str()) + "\n";
        qcols += v + "_" + col + ",";
      }
    py += v + "_E = " + py_list(t, "E") + "\n";
    traj_blocks +=
        "trajectory(" + v + "_t, [" + qcols + "], " + v + "_E)\n";
  }

  py += R"py(
fig1, (ax_err, ax_en) = plt.subplots(1, 2, figsize=(11, 4.5))
def series(methods, hs, errs, errEs):
    by = {}
    for m, h, e, eE in zip(methods, hs, errs, errEs):
        by.setdefault(m, []).append((h, e, eE))
    for m, pts in by.items():
        pts.sort()
        ax_err.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=m)
        ax_en.loglog([p[0] for p in pts], [p[2] for p in pts], "s--", label=m)

def ensemble(hs, errs, errEs):
    by = {}
    for h, e, eE in zip(hs, errs, errEs):
        by.setdefault(h, []).append((e, eE))
    hs_sorted = sorted(by)
    mean = [sum(p[0] for p in by[h]) / len(by[h]) for h in hs_sorted]
    lo = [min(p[0] for p in by[h]) for h in hs_sorted]
    hi = [max(p[0] for p in by[h]) for h in hs_sorted]
    meanE = [sum(p[1] for p in by[h]) / len(by[h]) for h in hs_sorted]
    ax_err.loglog(hs_sorted, mean, "k^-", label="ensemble mean")
    ax_err.loglog(hs_sorted, lo, "k:", label="ensemble min/max")
    ax_err.loglog(hs_sorted, hi, "k:")
    ax_en.loglog(hs_sorted, meanE, "k^-", label="ensemble mean")

def trajectory(ts, qs, Es):
    fig, (a, b) = plt.subplots(1, 2, figsize=(11, 4.5))
    for i, q in enumerate(qs):
        a.plot(ts, q, label=f"q{i}")
    b.plot(ts, Es)
    a.set_xlabel("t"); a.set_ylabel("q"); a.legend()
    b.set_xlabel("t"); b.set_ylabel("E")
    fig.tight_layout()
    fig.savefig(os.path.join(here, f"trajectory_{trajectory.count}.png"), dpi=130)
    trajectory.count += 1
trajectory.count = 0

)py";
  py += conv_blocks + ens_blocks + traj_blocks;
  py += R"py(
if ax_err.has_data():
    ax_err.set_xlabel("h"); ax_err.set_ylabel("final state error (inf norm)")
    ax_en.set_xlabel("h"); ax_en.set_ylabel("final energy error")
    ax_err.legend(); ax_en.legend()
    fig1.tight_layout()
    fig1.savefig(os.path.join(here, "error_vs_h.png"), dpi=130)
print("plots written to", here)
)py";

  fs::create_directories(out);
  const std::string script = (fs::path(out) / "plot.py").string();
  atomic_write(script, py);
  if (!quiet) std::cout << "wrote " << script << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational integrators for forced Lagrangian systems"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::uint64_t seed = 0;
  bool quiet = false;
  std::vector<std::string> plot_inputs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "RNG seed (overrides the config)");
    sub->add_flag("--quiet", quiet, "suppress the summary line");
  };

  CLI::App* sim = app.add_subcommand("simulate", "run one trajectory");
  CLI::App* con = app.add_subcommand("converge", "run a convergence study");
  CLI::App* ens = app.add_subcommand("ensemble", "run an ensemble study");
  CLI::App* plt = app.add_subcommand("plot", "emit a plot script from CSVs");
  add_common(sim);
  add_common(con);
  add_common(ens);
  plt->add_option("csv", plot_inputs, "CSV files to plot")->required();
  plt->add_option("--out", out_dir, "output directory");
  plt->add_flag("--quiet", quiet, "suppress the summary line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (plt->parsed()) return cmd_plot(plot_inputs, out_dir, quiet);
    const bool seed_given = sim->count("--seed") > 0 ||
                            con->count("--seed") > 0 ||
                            ens->count("--seed") > 0;
    RunConfig cfg = parse_config(config_path, seed, seed_given);
    if (sim->parsed()) return cmd_simulate(cfg, out_dir, quiet);
    if (con->parsed()) return cmd_converge(cfg, out_dir, quiet);
    if (ens->parsed()) return cmd_ensemble(cfg, out_dir, quiet);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

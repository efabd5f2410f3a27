// Command-line front end: scenario configs in, CSV/JSON artifacts out.
//
// Subcommands: simulate, reference, distance, convergence, check, value.
// All randomness flows from one master seed through counter-based stream
// derivation (replica index, lineage, restart index), so a fixed seed gives
// byte-identical artifacts for any worker count.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvlab/branching.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/functionals.hpp"
#include "mvlab/harness.hpp"
#include "mvlab/lifted.hpp"
#include "mvlab/metrics.hpp"
#include "mvlab/runconfig.hpp"
#include "mvlab/workers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<unsigned> workers_override;
};

struct RunContext {
  mvlab::RunConfig cfg;
  unsigned workers = 1;
  std::string hash;
  fs::path out;

  std::string meta() const {
    return "config_hash=" + hash + " seed=" + std::to_string(cfg.seed);
  }
};

RunContext make_context(const CliOptions& opts) {
  RunContext ctx;
  ctx.cfg = opts.config_path.empty() ? mvlab::RunConfig()
                                     : mvlab::load_config(opts.config_path);
  if (opts.seed_override) ctx.cfg.seed = *opts.seed_override;
  if (opts.workers_override) ctx.workers = *opts.workers_override;
  if (!opts.out_override.empty()) ctx.cfg.out_dir = opts.out_override;
  ctx.hash = mvlab::config_hash(ctx.cfg);
  ctx.out = ctx.cfg.out_dir;
  fs::create_directories(ctx.out);
  return ctx;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw mvlab::Error("cannot open '" + path.string() + "' for writing");
  os << text;
}

void write_manifest(const RunContext& ctx, const std::string& subcommand,
                    const std::vector<std::string>& artifacts,
                    const json& extra = json::object()) {
  json m;
  m["subcommand"] = subcommand;
  m["config_hash"] = ctx.hash;
  m["seed"] = ctx.cfg.seed;
  m["artifacts"] = artifacts;
  for (const auto& [key, value] : extra.items()) m[key] = value;
  write_text(ctx.out / "manifest.json", m.dump(2) + "\n");
  write_text(ctx.out / "config.json", mvlab::canonical_emit(ctx.cfg));
}

mvlab::CylinderFunctional functional_from_name(const std::string& name,
                                               std::size_t dim) {
  if (name == "mass") return mvlab::mass_functional(dim);
  if (name == "bump-pairing")
    return mvlab::pairing_functional(
        mvlab::gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0));
  if (name == "tanh-pairing")
    return mvlab::pairing_functional(mvlab::tanh_coordinate_field(0, 1.0, dim));
  if (name == "tanh-pairing-squared")
    return mvlab::squared_pairing_functional(
        mvlab::tanh_coordinate_field(0, 1.0, dim));
  if (name == "bump-pairing-squared")
    return mvlab::squared_pairing_functional(
        mvlab::gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0));
  throw mvlab::ConfigError("unknown functional name '" + name + "'");
}

int cmd_simulate(const RunContext& ctx) {
  const mvlab::CoefficientSet coeffs = ctx.cfg.scenario.coefficients();
  std::vector<std::string> artifacts;
  std::vector<mvlab::BranchingTrajectory> trajs(ctx.cfg.simulate.runs);
  mvlab::parallel_for(ctx.cfg.simulate.runs, ctx.workers, [&](std::size_t r) {
    trajs[r] = mvlab::simulate_branching(
        ctx.cfg.simulate.populations, coeffs, ctx.cfg.scenario.init, ctx.cfg.grid,
        ctx.cfg.seed, ctx.cfg.simulate.particle_cap, r);
  });
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    const std::string mname = "measures_run" + std::to_string(r) + ".csv";
    const std::string ename = "events_run" + std::to_string(r) + ".csv";
    {
      std::ofstream os(ctx.out / mname, std::ios::binary);
      os << "# " << ctx.meta() << "\n";
      mvlab::write_trajectory_csv(os, trajs[r]);
    }
    {
      std::ofstream os(ctx.out / ename, std::ios::binary);
      os << "# " << ctx.meta() << "\n";
      mvlab::write_events_csv(os, trajs[r]);
    }
    artifacts.push_back(mname);
    artifacts.push_back(ename);
  }
  write_manifest(ctx, "simulate", artifacts);
  std::cout << "simulate: " << trajs.size() << " run(s) written to " << ctx.out
            << "\n";
  return 0;
}

int cmd_reference(const RunContext& ctx) {
  const mvlab::CoefficientSet coeffs = ctx.cfg.scenario.coefficients();
  mvlab::LiftedConfig lc;
  lc.ensemble = ctx.cfg.reference.ensemble;
  lc.grid = ctx.cfg.grid;
  lc.seed = ctx.cfg.seed;
  const auto init = mvlab::LiftedInit::from_scenario(ctx.cfg.scenario.init);
  const mvlab::ReferenceFlow flow =
      ctx.cfg.reference.method == "picard"
          ? mvlab::picard_solve(lc, coeffs, init,
                                ctx.cfg.reference.picard_iterations,
                                ctx.cfg.reference.gap_coarsen_radius)
          : mvlab::simulate_lifted_self(lc, coeffs, init);

  std::ofstream os(ctx.out / "reference_flow.csv", std::ios::binary);
  os << "# " << ctx.meta() << "\n";
  os << "time,";
  for (std::size_t k = 0; k < ctx.cfg.scenario.dim; ++k)
    os << "x" << (k + 1) << ",";
  os << "weight\n";
  os.precision(17);
  for (std::size_t j = 0; j < flow.measures.size(); ++j) {
    const double t = flow.grid.time(j);
    for (const auto& atom : flow.measures[j].atoms()) {
      os << t;
      for (double c : atom.location) os << "," << c;
      os << "," << atom.weight << "\n";
    }
  }
  os.close();

  json extra;
  extra["method"] = flow.method;
  extra["ensemble"] = flow.ensemble;
  extra["dt"] = flow.grid.dt;
  extra["iteration_gaps"] = flow.iteration_gaps;
  extra["terminal_mass"] = mvlab::mass(flow.terminal());
  write_manifest(ctx, "reference", {"reference_flow.csv"}, extra);
  std::cout << "reference: method=" << flow.method
            << " terminal mass=" << mvlab::mass(flow.terminal()) << "\n";
  return 0;
}

int cmd_distance(const RunContext& ctx) {
  if (ctx.cfg.distance.mu_csv.empty() || ctx.cfg.distance.nu_csv.empty())
    throw mvlab::ConfigError("distance requires 'mu' and 'nu' CSV paths");
  mvlab::PointMeasure mu = mvlab::read_measure_csv(ctx.cfg.distance.mu_csv);
  mvlab::PointMeasure nu = mvlab::read_measure_csv(ctx.cfg.distance.nu_csv);
  double error_bound = 0.0;
  if (ctx.cfg.distance.coarsen_radius > 0.0) {
    auto cm = mvlab::coarsen(mu, ctx.cfg.distance.coarsen_radius);
    auto cn = mvlab::coarsen(nu, ctx.cfg.distance.coarsen_radius);
    error_bound = cm.error_bound + cn.error_bound;
    mu = std::move(cm.measure);
    nu = std::move(cn.measure);
  }
  json out;
  std::vector<std::string> artifacts = {"distance.json"};
  if (ctx.cfg.distance.metric == "extended-w1") {
    out["value"] = mvlab::extended_w1(mu, nu);
  } else {
    const mvlab::BlWitness witness = mvlab::bounded_lipschitz_witness(mu, nu);
    out["value"] = witness.value;
    if (ctx.cfg.distance.witness) {
      std::ofstream os(ctx.out / "witness.csv", std::ios::binary);
      os << "# " << ctx.meta() << "\n";
      const std::size_t d = witness.points.empty() ? 1 : witness.points[0].size();
      for (std::size_t k = 0; k < d; ++k) os << "x" << (k + 1) << ",";
      os << "f\n";
      os.precision(17);
      for (std::size_t i = 0; i < witness.points.size(); ++i) {
        for (double c : witness.points[i]) os << c << ",";
        os << witness.f[i] << "\n";
      }
      artifacts.push_back("witness.csv");
    }
  }
  out["metric"] = ctx.cfg.distance.metric;
  out["coarsen_error_bound"] = error_bound;
  write_text(ctx.out / "distance.json", out.dump(2) + "\n");
  write_manifest(ctx, "distance", artifacts, out);
  std::cout << "distance (" << ctx.cfg.distance.metric
            << "): " << out["value"].get<double>() << "\n";
  return 0;
}

int cmd_convergence(const RunContext& ctx) {
  mvlab::StudySettings settings;
  settings.n_list = ctx.cfg.convergence.n_list;
  settings.replica_factor = ctx.cfg.convergence.replica_factor;
  settings.replica_cap = ctx.cfg.convergence.replica_cap;
  settings.reference_ensemble = ctx.cfg.convergence.reference_ensemble;
  settings.reference_batches = ctx.cfg.convergence.reference_batches;
  settings.grid = ctx.cfg.grid;
  settings.seed = ctx.cfg.seed;
  settings.workers = ctx.workers;
  settings.particle_cap = ctx.cfg.simulate.particle_cap;
  const mvlab::CylinderFunctional g =
      functional_from_name(ctx.cfg.convergence.g, ctx.cfg.scenario.dim);
  const mvlab::WeakErrorTable table =
      mvlab::weak_error_study(ctx.cfg.scenario, g, settings);
  const mvlab::RateFit fit = mvlab::fit_rate(table);
  {
    std::ofstream os(ctx.out / "weak_error.csv", std::ios::binary);
    os << "# " << ctx.meta() << "\n";
    mvlab::write_weak_error_csv(os, table);
  }
  write_text(ctx.out / "rate_fit.json", mvlab::rate_fit_json(table, fit));
  json extra;
  extra["slope"] = fit.slope;
  extra["conclusive"] = fit.conclusive;
  write_manifest(ctx, "convergence", {"weak_error.csv", "rate_fit.json"}, extra);
  std::cout << "convergence: slope=" << fit.slope
            << " ci=" << fit.ci_half_width
            << (fit.conclusive ? "" : (" INCONCLUSIVE: " + fit.diagnostics))
            << "\n";
  return 0;
}

int cmd_check(const RunContext& ctx) {
  mvlab::BatterySettings settings;
  settings.grid = ctx.cfg.grid;
  settings.seed = ctx.cfg.seed;
  settings.workers = ctx.workers;
  settings.ensemble_runs = ctx.cfg.check.ensemble_runs;
  settings.populations = ctx.cfg.check.populations;
  settings.ito_replicas = ctx.cfg.check.ito_replicas;
  settings.lifted_ensemble = ctx.cfg.check.lifted_ensemble;
  settings.sandwich_pairs = ctx.cfg.check.sandwich_pairs;

  bool all_ok = true;
  json report = json::array();
  for (const std::string& name : ctx.cfg.check.scenarios) {
    mvlab::Scenario scenario = mvlab::make_scenario(mvlab::family_from_name(name));
    const mvlab::BatteryReport rep = mvlab::run_check_battery(scenario, settings);
    for (const auto& item : rep.items) {
      json ji;
      ji["scenario"] = name;
      ji["item"] = item.name;
      ji["passed"] = item.passed;
      ji["value"] = item.value;
      ji["tolerance"] = item.tolerance;
      ji["detail"] = item.detail;
      report.push_back(ji);
      std::cout << (item.passed ? "[PASS] " : "[FAIL] ") << name << "/"
                << item.name << "  " << item.detail << "\n";
    }
    all_ok = all_ok && rep.all_passed;
  }
  json extra;
  extra["all_passed"] = all_ok;
  extra["report"] = report;
  write_text(ctx.out / "check_report.json", extra.dump(2) + "\n");
  write_manifest(ctx, "check", {"check_report.json"}, extra);
  std::cout << (all_ok ? "check: ALL PASS\n" : "check: FAILURES\n");
  return all_ok ? 0 : 1;
}

int cmd_value(const RunContext& ctx) {
  const mvlab::CoefficientSet coeffs = ctx.cfg.scenario.coefficients();
  mvlab::ValueSolverSettings solver;
  solver.ensemble = ctx.cfg.value.ensemble;
  solver.restarts = ctx.cfg.value.restarts;
  solver.grid = ctx.cfg.grid;
  solver.seed = ctx.cfg.seed;
  const mvlab::CylinderFunctional g =
      functional_from_name(ctx.cfg.value.g, ctx.cfg.scenario.dim);

  mvlab::PointMeasure mu;
  if (!ctx.cfg.value.measure_csv.empty()) {
    mu = mvlab::read_measure_csv(ctx.cfg.value.measure_csv);
  } else {
    // Default: the projected initial ensemble of the scenario.
    mvlab::LiftedConfig lc;
    lc.ensemble = ctx.cfg.value.ensemble;
    lc.grid = ctx.cfg.grid;
    lc.seed = ctx.cfg.seed;
    const mvlab::ReferenceFlow flow = mvlab::simulate_lifted_self(
        lc, coeffs, mvlab::LiftedInit::from_scenario(ctx.cfg.scenario.init));
    mu = flow.measures.front();
  }

  json rows = json::array();
  for (double t : ctx.cfg.value.times) {
    const mvlab::ValueEstimate est =
        mvlab::value_function_U(t, mu, g, coeffs, solver);
    json row;
    row["t"] = t;
    row["value"] = est.value;
    row["stderr"] = est.stderr_;
    row["exact"] = est.exact;
    rows.push_back(row);
    std::cout << "U(" << t << ", mu) = " << est.value << " +- " << est.stderr_
              << (est.exact ? " (exact)" : "") << "\n";
  }
  json extra;
  extra["estimates"] = rows;
  write_text(ctx.out / "value.json", extra.dump(2) + "\n");
  write_manifest(ctx, "value", {"value.json"}, extra);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo lab for branching mean-field particle systems"};
  app.require_subcommand(1);

  CliOptions opts;
  app.add_option("--config", opts.config_path, "JSON run configuration");
  std::uint64_t seed_val = 0;
  unsigned workers_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "override the config seed");
  auto* workers_opt =
      app.add_option("--workers", workers_val, "worker threads (results never depend on this)");
  app.add_option("--out", opts.out_override, "output directory override");

  auto* simulate = app.add_subcommand("simulate", "branching trajectory CSVs");
  auto* reference = app.add_subcommand("reference", "lifted reference flow");
  auto* distance = app.add_subcommand("distance", "distance between measure CSVs");
  auto* convergence = app.add_subcommand("convergence", "weak-error study + rate fit");
  auto* check = app.add_subcommand("check", "structural check battery");
  auto* value = app.add_subcommand("value", "value-function estimates");

  CLI11_PARSE(app, argc, argv);
  if (!seed_opt->empty()) opts.seed_override = seed_val;
  if (!workers_opt->empty()) opts.workers_override = workers_val;

  try {
    const RunContext ctx = make_context(opts);
    if (simulate->parsed()) return cmd_simulate(ctx);
    if (reference->parsed()) return cmd_reference(ctx);
    if (distance->parsed()) return cmd_distance(ctx);
    if (convergence->parsed()) return cmd_convergence(ctx);
    if (check->parsed()) return cmd_check(ctx);
    if (value->parsed()) return cmd_value(ctx);
  } catch (const mvlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

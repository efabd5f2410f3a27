#include "mvlab/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/metrics.hpp"
#include "mvlab/numeric.hpp"
#include "mvlab/workers.hpp"

namespace mvlab {

std::size_t replica_count(const StudySettings& s, std::size_t n) {
  const double r = s.replica_factor * static_cast<double>(n) * static_cast<double>(n);
  return std::max<std::size_t>(
      2, std::min<std::size_t>(s.replica_cap,
                               static_cast<std::size_t>(std::ceil(r))));
}

namespace {

// Evaluates G at the terminal empirical measure without materializing it.
class TerminalGObserver : public BranchingObserver {
 public:
  TerminalGObserver(const CylinderFunctional& g, std::size_t populations,
                    std::size_t last_index)
      : g_(g), inv_n_(1.0 / static_cast<double>(populations)),
        last_index_(last_index) {}

  void on_grid_point(std::size_t index, double, const SystemView& view) override {
    if (index != last_index_) return;
    std::vector<double> u(g_.arity(), 0.0);
    view.for_each_particle([&](std::size_t, const Label&,
                               std::span<const double> pos, double) {
      for (std::size_t j = 0; j < u.size(); ++j)
        u[j] += inv_n_ * g_.inner()[j].eval(pos);
    });
    value_ = g_.eval_at(u);
  }

  double value() const { return value_; }

 private:
  const CylinderFunctional& g_;
  double inv_n_;
  std::size_t last_index_;
  double value_ = 0.0;
};

double reference_run(const Scenario& scenario, const CylinderFunctional& g,
                     const StudySettings& settings, std::size_t batch,
                     const CoefficientSet& coeffs) {
  LiftedConfig cfg;
  cfg.ensemble = settings.reference_ensemble;
  cfg.grid = settings.grid;
  cfg.seed = derive_key(settings.seed, StreamTag::kStudy, {0xFEED, batch});
  const ReferenceFlow flow =
      simulate_lifted_self(cfg, coeffs, LiftedInit::from_scenario(scenario.init));
  return eval_G(g, flow.terminal());
}

}  // namespace

WeakErrorTable weak_error_study(const Scenario& scenario,
                                const CylinderFunctional& g,
                                const StudySettings& settings) {
  const CoefficientSet coeffs = scenario.coefficients();
  const std::size_t max_n =
      *std::max_element(settings.n_list.begin(), settings.n_list.end());
  if (settings.reference_ensemble < 16 * max_n)
    throw DomainError("weak_error_study: reference ensemble must be at least "
                      "16x the largest N");

  WeakErrorTable table;
  table.reference_ensemble = settings.reference_ensemble;
  {
    std::vector<double> ref(settings.reference_batches);
    parallel_for(settings.reference_batches, settings.workers, [&](std::size_t b) {
      ref[b] = reference_run(scenario, g, settings, b, coeffs);
    });
    const MeanStderr ms = mean_stderr(ref);
    table.reference_value = ms.mean;
    table.reference_stderr = ms.stderr_;
  }

  std::vector<std::size_t> ns = settings.n_list;
  std::sort(ns.begin(), ns.end());
  for (const std::size_t n : ns) {
    const std::size_t replicas = replica_count(settings, n);
    std::vector<double> values(replicas);
    parallel_for(replicas, settings.workers, [&](std::size_t r) {
      BranchingConfig cfg;
      cfg.populations = n;
      cfg.grid = settings.grid;
      cfg.seed = settings.seed;
      cfg.run_id = (static_cast<std::uint64_t>(n) << 40) + r;
      cfg.particle_cap = settings.particle_cap;
      TerminalGObserver obs(g, n, settings.grid.steps);
      run_branching(cfg, coeffs, scenario.init, obs);
      values[r] = obs.value();
    });
    const MeanStderr ms = mean_stderr(values);
    WeakErrorRow row;
    row.n = n;
    row.replicas = replicas;
    row.mean_g = ms.mean;
    row.stderr_ = ms.stderr_;
    row.reference_g = table.reference_value;
    row.abs_bias = std::fabs(ms.mean - table.reference_value);
    row.signal = row.abs_bias > 3.0 * ms.stderr_;
    table.rows.push_back(row);
  }
  return table;
}

RateFit fit_rate(const WeakErrorTable& table) {
  RateFit fit;
  std::vector<double> x, y;
  double min_bias = std::numeric_limits<double>::infinity();
  for (const auto& row : table.rows) {
    if (!row.signal || row.abs_bias <= 0.0) continue;
    x.push_back(std::log(static_cast<double>(row.n)));
    y.push_back(std::log(row.abs_bias));
    min_bias = std::min(min_bias, row.abs_bias);
  }
  fit.points_used = x.size();
  if (x.size() < 3) {
    fit.diagnostics = "only " + std::to_string(x.size()) +
                      " signal-dominated rows (need >= 3)";
    return fit;
  }
  if (table.reference_stderr > min_bias / 3.0) {
    std::ostringstream os;
    os << "reference stderr " << table.reference_stderr
       << " exceeds a third of the smallest fitted bias " << min_bias;
    fit.diagnostics = os.str();
    return fit;
  }
  const std::size_t n = x.size();
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    sse += r * r;
  }
  const double se =
      n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : 0.0;
  fit.ci_half_width = t_quantile_975(n - 2) * se;
  fit.conclusive = true;
  return fit;
}

TimeContinuityResult time_continuity_check(
    const std::vector<PointMeasure>& measures, const SimGrid& grid,
    const CoefficientBounds& bounds, double initial_count, std::size_t dim,
    std::span<const std::pair<double, double>> pairs,
    std::size_t max_support) {
  if (measures.size() != grid.points())
    throw ShapeError("time_continuity_check: measures do not match the grid");
  TimeContinuityResult out;
  const double T = grid.horizon;
  out.bound = initial_count * std::exp(bounds.gamma_bar * bounds.M * T) *
              bounds.M *
              (std::sqrt(T) * (1.0 + bounds.gamma_bar) + static_cast<double>(dim));

  auto grid_index = [&](double t) {
    const double ratio = t / grid.dt;
    const std::size_t j = static_cast<std::size_t>(std::llround(ratio));
    if (j > grid.steps || std::fabs(ratio - static_cast<double>(j)) > 1e-9)
      throw DomainError("time_continuity_check: time not on the grid");
    return j;
  };
  auto distance = [&](const PointMeasure& a, const PointMeasure& b) {
    if (max_support == 0) return bounded_lipschitz(a, b);
    const CoarsenResult ca = coarsen_to_support(a, max_support);
    const CoarsenResult cb = coarsen_to_support(b, max_support);
    return bounded_lipschitz(ca.measure, cb.measure) + ca.error_bound +
           cb.error_bound;
  };

  for (const auto& [t, s] : pairs) {
    TimeContinuityResult::Item item;
    item.t = std::min(t, s);
    item.s = std::max(t, s);
    const std::size_t j0 = grid_index(item.t);
    const std::size_t j1 = grid_index(item.s);
    if (j0 == j1) {
      // s == t: the 0/0 quotient counts as 0.
      out.items.push_back(item);
      continue;
    }
    item.distance = distance(measures[j0], measures[j1]);
    item.quotient = item.distance / std::sqrt(item.s - item.t);
    out.max_quotient = std::max(out.max_quotient, item.quotient);
    out.items.push_back(item);
  }
  out.passed = out.max_quotient <= out.bound;
  return out;
}

TimeContinuityResult time_continuity_check(
    const std::vector<PointMeasure>& measures, const SimGrid& grid,
    const CoefficientBounds& bounds, double initial_count, std::size_t dim,
    std::size_t max_support) {
  // Default pair set: gaps shrinking through {T/4, T/16, T/64} from a few
  // base times.
  const std::size_t steps = grid.steps;
  std::vector<std::pair<double, double>> pairs;
  const double fractions[] = {0.25, 1.0 / 16.0, 1.0 / 64.0};
  const double bases[] = {0.0, 0.25, 0.5, 0.75};
  for (double frac : fractions) {
    const std::size_t gap = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(frac * steps)));
    for (double base : bases) {
      const std::size_t j0 =
          static_cast<std::size_t>(std::llround(base * steps));
      if (j0 + gap > steps) continue;
      pairs.emplace_back(grid.time(j0), grid.time(j0 + gap));
    }
  }
  return time_continuity_check(measures, grid, bounds, initial_count, dim,
                               pairs, max_support);
}

MassGrowthResult mass_growth_check(const MassStatistics& stats, double gamma_bar,
                                   double m_bound) {
  MassGrowthResult out;
  out.worst_margin = std::numeric_limits<double>::infinity();
  const std::size_t points = stats.times.size();
  for (std::size_t j = 0; j < points; ++j) {
    for (std::size_t k = j + 1; k < points; ++k) {
      const double bound =
          stats.mean[j] *
              std::exp(gamma_bar * m_bound * (stats.times[k] - stats.times[j])) +
          3.0 * stats.stderr_[k];
      const double margin = bound - stats.mean[k];
      if (margin < out.worst_margin) {
        out.worst_margin = margin;
        out.worst_t = stats.times[j];
        out.worst_s = stats.times[k];
      }
    }
  }
  out.passed = out.worst_margin >= 0.0;
  return out;
}

namespace {

PointMeasure random_sandwich_measure(RngStream& rng, std::size_t dim,
                                     bool allow_empty) {
  const std::size_t atoms =
      allow_empty ? static_cast<std::size_t>(rng.u01() * 4.999)
                  : 1 + static_cast<std::size_t>(rng.u01() * 3.999);
  PointMeasure mu(dim);
  for (std::size_t a = 0; a < atoms; ++a) {
    std::vector<double> x(dim);
    for (auto& v : x) v = (2.0 * rng.u01() - 1.0) * 2.0;
    mu.push_atom(std::move(x), rng.u01() * 1.5);
  }
  return mu;
}

}  // namespace

std::size_t metric_sandwich_violations(std::size_t pairs, std::uint64_t seed,
                                       double tolerance) {
  std::size_t violations = 0;
  RngStream rng(seed, StreamTag::kTest, {0x5A});
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t dim = rng.u01() < 0.5 ? 1 : 2;
    const PointMeasure mu = random_sandwich_measure(rng, dim, true);
    const PointMeasure nu = random_sandwich_measure(rng, dim, true);
    const double d = bounded_lipschitz(mu, nu);
    const double w = extended_w1(mu, nu);
    if (w < 0.5 * d - tolerance || w > 2.0 * d + tolerance) ++violations;
  }
  return violations;
}

namespace {

struct EnsembleLogs {
  // positions per grid point, flattened per run then merged in run order
  std::vector<std::vector<double>> positions;  // [point] -> flat coords
  std::vector<std::vector<double>> counts;     // [run][point]
};

class EnsembleLogObserver : public BranchingObserver {
 public:
  EnsembleLogObserver(std::size_t points, std::size_t dim)
      : dim_(dim), positions(points), counts(points, 0.0) {}

  void on_grid_point(std::size_t index, double, const SystemView& view) override {
    counts[index] = static_cast<double>(view.total_particles());
    auto& buf = positions[index];
    view.for_each_particle([&](std::size_t, const Label&,
                               std::span<const double> pos, double) {
      buf.insert(buf.end(), pos.begin(), pos.end());
    });
  }

  std::size_t dim_;
  std::vector<std::vector<double>> positions;
  std::vector<double> counts;
};

class MultiItoObserver : public BranchingObserver {
 public:
  MultiItoObserver(const std::vector<TimeCylinderFunctional>& fs,
                   const CoefficientSet& coeffs, std::size_t populations,
                   const SimGrid& grid)
      : populations_(populations) {
    for (const auto& f : fs)
      acc_.emplace_back(&f, &coeffs, populations, grid.dt, grid.steps);
  }

  void on_grid_point(std::size_t index, double time, const SystemView& view) override {
    const PointMeasure mu =
        view.make_measure(1.0 / static_cast<double>(populations_));
    for (auto& a : acc_) a.on_grid_point(index, time, mu);
  }

  std::vector<double> residuals() const {
    std::vector<double> out;
    for (const auto& a : acc_) out.push_back(a.residual());
    return out;
  }

 private:
  std::size_t populations_;
  std::vector<ItoResidualAccumulator> acc_;
};

}  // namespace

std::vector<TimeCylinderFunctional> ito_battery_functionals(std::size_t dim) {
  std::vector<TimeCylinderFunctional> fs;
  fs.push_back(static_functional(mass_functional(dim), "mass"));
  fs.push_back(static_functional(
      pairing_functional(gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0)),
      "bump-pairing"));
  fs.push_back(static_functional(
      squared_pairing_functional(tanh_coordinate_field(0, 1.0, dim)),
      "tanh-pairing-squared"));
  return fs;
}

BatteryReport run_check_battery(const Scenario& scenario,
                                const BatterySettings& settings) {
  BatteryReport report;
  const CoefficientSet coeffs = scenario.coefficients();
  const std::size_t dim = scenario.dim;
  const SimGrid& grid = settings.grid;

  // Assumption validation.
  {
    ProbePlan plan;
    plan.t_max = grid.horizon;
    plan.seed = derive_key(settings.seed, StreamTag::kProbe, {1});
    const ValidationReport vr = validate_assumptions(coeffs, plan);
    BatteryItem item;
    item.name = "assumptions";
    item.passed = vr.passed;
    item.value = vr.lipschitz_quotient_b;
    item.tolerance = coeffs.bounds.L;
    for (const auto& v : vr.violations) item.detail += v + "; ";
    report.add(std::move(item));
  }

  // Branching ensemble: mass statistics + environment estimate per time.
  std::vector<EnsembleLogObserver> logs;
  logs.reserve(settings.ensemble_runs);
  for (std::size_t r = 0; r < settings.ensemble_runs; ++r)
    logs.emplace_back(grid.points(), dim);
  parallel_for(settings.ensemble_runs, settings.workers, [&](std::size_t r) {
    BranchingConfig cfg;
    cfg.populations = settings.populations;
    cfg.grid = grid;
    cfg.seed = settings.seed;
    cfg.run_id = 0xE500 + r;
    run_branching(cfg, coeffs, scenario.init, logs[r]);
  });

  {
    std::vector<std::vector<double>> counts;
    counts.reserve(settings.ensemble_runs);
    for (const auto& log : logs) counts.push_back(log.counts);
    const MassStatistics stats = mass_statistics_from_counts(counts, grid);
    const MassGrowthResult mg =
        mass_growth_check(stats, coeffs.bounds.gamma_bar, coeffs.bounds.M);
    BatteryItem item;
    item.name = "mass-growth";
    item.passed = mg.passed;
    item.value = mg.worst_margin;
    item.tolerance = 0.0;
    std::ostringstream os;
    os << "worst margin " << mg.worst_margin << " at (" << mg.worst_t << ","
       << mg.worst_s << ")";
    item.detail = os.str();
    report.add(std::move(item));
  }

  {
    // Ensemble-averaged environment estimate per grid point; a handful of
    // runs suffices for the quotient.
    const std::size_t env_runs = std::min<std::size_t>(settings.ensemble_runs, 16);
    const double scale = 1.0 / (static_cast<double>(env_runs) *
                                static_cast<double>(settings.populations));
    std::vector<PointMeasure> env(grid.points());
    for (std::size_t j = 0; j < grid.points(); ++j) {
      PointMeasure mu(dim);
      for (std::size_t r = 0; r < env_runs; ++r) {
        const auto& flat = logs[r].positions[j];
        for (std::size_t o = 0; o + dim <= flat.size(); o += dim)
          mu.push_atom(std::vector<double>(flat.begin() + o, flat.begin() + o + dim),
                       scale);
      }
      env[j] = std::move(mu);
    }
    const TimeContinuityResult tc = time_continuity_check(
        env, grid, coeffs.bounds, scenario.init.initial_mass(), dim,
        /*max_support=*/128);
    BatteryItem item;
    item.name = "time-continuity";
    item.passed = tc.passed;
    item.value = tc.max_quotient;
    item.tolerance = tc.bound;
    std::ostringstream os;
    os << "max quotient " << tc.max_quotient << " vs bound " << tc.bound;
    item.detail = os.str();
    report.add(std::move(item));
  }

  // Empirical Ito residuals, Richardson-extrapolated to dt -> 0 over paired
  // common-random-number runs at dt and dt/2: the extrapolation removes the
  // O(dt) left-endpoint quadrature bias (which fast-growing scenarios resolve
  // above the Monte Carlo noise), while a genuine martingale violation would
  // survive it. The extrapolated ensemble mean must sit within 3 stderr of 0.
  {
    const auto fs = ito_battery_functionals(dim);
    const SimGrid fine(grid.horizon, grid.dt / 2.0);
    std::vector<std::vector<double>> extrapolated(
        fs.size(), std::vector<double>(settings.ito_replicas));
    parallel_for(settings.ito_replicas, settings.workers, [&](std::size_t r) {
      BranchingConfig cfg;
      cfg.populations = settings.populations;
      cfg.seed = settings.seed;
      cfg.run_id = 0x170000 + r;  // identical streams at both levels
      cfg.grid = grid;
      MultiItoObserver coarse(fs, coeffs, settings.populations, grid);
      run_branching(cfg, coeffs, scenario.init, coarse);
      cfg.grid = fine;
      MultiItoObserver halved(fs, coeffs, settings.populations, fine);
      run_branching(cfg, coeffs, scenario.init, halved);
      const auto rc = coarse.residuals();
      const auto rf = halved.residuals();
      for (std::size_t k = 0; k < fs.size(); ++k)
        extrapolated[k][r] = 2.0 * rf[k] - rc[k];
    });
    for (std::size_t k = 0; k < fs.size(); ++k) {
      const MeanStderr ms = mean_stderr(extrapolated[k]);
      BatteryItem item;
      item.name = "ito-residual/" + fs[k].name;
      const double slack = 3.0 * ms.stderr_ + 1e-12;
      item.passed = std::fabs(ms.mean) <= slack;
      item.value = ms.mean;
      item.tolerance = slack;
      std::ostringstream os;
      os << "extrapolated mean " << ms.mean << " stderr " << ms.stderr_;
      item.detail = os.str();
      report.add(std::move(item));
    }
  }

  // Weak Fokker-Planck residuals along independent reference flows.
  {
    std::vector<TimeSpaceFunction> tests;
    tests.push_back(static_test_function(constant_field(1.0, dim)));
    tests.push_back(static_test_function(
        gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0)));
    tests.push_back(
        time_scaled_test_function(tanh_coordinate_field(0, 1.0, dim), 0.5));
    const std::size_t batches = 4;
    const double mass_bound = scenario.init.initial_mass() *
                              std::exp(coeffs.bounds.gamma_bar * coeffs.bounds.M *
                                       grid.horizon);
    for (const auto& test : tests) {
      std::vector<double> res(batches);
      parallel_for(batches, settings.workers, [&](std::size_t b) {
        LiftedConfig cfg;
        cfg.ensemble = settings.lifted_ensemble;
        cfg.grid = grid;
        cfg.seed = derive_key(settings.seed, StreamTag::kStudy, {0xF9, b});
        const ReferenceFlow flow = simulate_lifted_self(
            cfg, coeffs, LiftedInit::from_scenario(scenario.init));
        res[b] = fp_residual(test, flow, coeffs);
      });
      const MeanStderr ms = mean_stderr(res);
      const double m_bd = coeffs.bounds.M;
      const double k_f =
          4.0 * grid.horizon * mass_bound *
          (test.sup_time_deriv + m_bd * test.sup_grad +
           0.5 * static_cast<double>(dim) * m_bd * m_bd * test.sup_hess +
           coeffs.bounds.gamma_bar * (m_bd + 1.0) * test.sup_norm);
      BatteryItem item;
      item.name = "fp-residual/" + test.name;
      item.tolerance = k_f * grid.dt + 3.0 * ms.stderr_ + 1e-12;
      item.value = ms.mean;
      item.passed = std::fabs(ms.mean) <= item.tolerance;
      std::ostringstream os;
      os << "mean " << ms.mean << " stderr " << ms.stderr_ << " dt-budget "
         << k_f * grid.dt;
      item.detail = os.str();
      report.add(std::move(item));
    }
  }

  // Metric equivalence sandwich.
  {
    const std::size_t bad = metric_sandwich_violations(
        settings.sandwich_pairs, derive_key(settings.seed, StreamTag::kTest, {7}));
    BatteryItem item;
    item.name = "metric-sandwich";
    item.passed = bad == 0;
    item.value = static_cast<double>(bad);
    item.tolerance = 0.0;
    item.detail = std::to_string(bad) + " violations over " +
                  std::to_string(settings.sandwich_pairs) + " pairs";
    report.add(std::move(item));
  }

  return report;
}

namespace {

// Collects terminal positions only.
class TerminalPositionsObserver : public BranchingObserver {
 public:
  TerminalPositionsObserver(std::size_t last_index, std::size_t dim)
      : last_index_(last_index), dim_(dim) {}

  void on_grid_point(std::size_t index, double, const SystemView& view) override {
    if (index != last_index_) return;
    view.for_each_particle([&](std::size_t, const Label&,
                               std::span<const double> pos, double) {
      flat_.insert(flat_.end(), pos.begin(), pos.end());
    });
  }

  const std::vector<double>& flat() const { return flat_; }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t last_index_;
  std::size_t dim_;
  std::vector<double> flat_;
};

}  // namespace

FlowAgreementResult flow_agreement(const Scenario& scenario,
                                   std::size_t populations, std::size_t runs,
                                   std::size_t lifted_ensemble,
                                   const SimGrid& grid, double lattice_step,
                                   std::uint64_t seed, unsigned workers) {
  const CoefficientSet coeffs = scenario.coefficients();
  const std::size_t dim = scenario.dim;

  std::vector<TerminalPositionsObserver> obs;
  obs.reserve(runs);
  for (std::size_t r = 0; r < runs; ++r) obs.emplace_back(grid.steps, dim);
  parallel_for(runs, workers, [&](std::size_t r) {
    BranchingConfig cfg;
    cfg.populations = populations;
    cfg.grid = grid;
    cfg.seed = seed;
    cfg.run_id = 0xA6000 + r;
    run_branching(cfg, coeffs, scenario.init, obs[r]);
  });
  PointMeasure branching(dim);
  const double scale =
      1.0 / (static_cast<double>(runs) * static_cast<double>(populations));
  for (const auto& o : obs) {
    const auto& flat = o.flat();
    for (std::size_t off = 0; off + dim <= flat.size(); off += dim)
      branching.push_atom(
          std::vector<double>(flat.begin() + off, flat.begin() + off + dim), scale);
  }

  LiftedConfig lc;
  lc.ensemble = lifted_ensemble;
  lc.grid = grid;
  lc.seed = derive_key(seed, StreamTag::kStudy, {0xA61});
  const ReferenceFlow flow =
      simulate_lifted_self(lc, coeffs, LiftedInit::from_scenario(scenario.init));

  const CoarsenResult cb = lattice_coarsen(branching, lattice_step);
  const CoarsenResult cl = lattice_coarsen(flow.terminal(), lattice_step);
  FlowAgreementResult out;
  out.branching_mass = mass(branching);
  out.lifted_mass = mass(flow.terminal());
  out.lattice_bound = cb.error_bound + cl.error_bound;
  out.union_support = cb.measure.size() + cl.measure.size();
  out.distance = bounded_lipschitz(cb.measure, cl.measure);
  return out;
}

ItoDtStudy ito_dt_study(const Scenario& scenario, std::size_t populations,
                        std::size_t replicas, double coarse_dt, double horizon,
                        std::size_t levels, std::uint64_t seed, unsigned workers) {
  const CoefficientSet coeffs = scenario.coefficients();
  const auto fs = ito_battery_functionals(scenario.dim);
  // residuals[level][f][replica]
  std::vector<std::vector<std::vector<double>>> residuals(
      levels, std::vector<std::vector<double>>(fs.size(),
                                               std::vector<double>(replicas)));
  for (std::size_t level = 0; level < levels; ++level) {
    const SimGrid grid(horizon, coarse_dt / static_cast<double>(1u << level));
    parallel_for(replicas, workers, [&](std::size_t r) {
      BranchingConfig cfg;
      cfg.populations = populations;
      cfg.grid = grid;
      cfg.seed = seed;
      cfg.run_id = 0x17A000 + r;  // identical across levels: common randomness
      MultiItoObserver mobs(fs, coeffs, populations, grid);
      run_branching(cfg, coeffs, scenario.init, mobs);
      const auto res = mobs.residuals();
      for (std::size_t k = 0; k < fs.size(); ++k) residuals[level][k][r] = res[k];
    });
  }

  ItoDtStudy study;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    ItoDtStudy::Item item;
    item.functional = fs[k].name;
    const MeanStderr finest = mean_stderr(residuals[levels - 1][k]);
    item.mean_finest = finest.mean;
    item.stderr_finest = finest.stderr_;
    item.mean_zero_pass = std::fabs(finest.mean) <= 3.0 * finest.stderr_ + 1e-12;
    std::vector<double> diff(replicas);
    for (std::size_t level = 0; level + 1 < levels; ++level) {
      for (std::size_t r = 0; r < replicas; ++r)
        diff[r] = residuals[level][k][r] - residuals[level + 1][k][r];
      const MeanStderr ms = mean_stderr(diff);
      item.diff_mean.push_back(ms.mean);
      item.diff_stderr.push_back(ms.stderr_);
    }
    if (item.diff_mean.size() >= 2) {
      // A ratio claim needs both differences measured tightly: at 10 sigma
      // per component the ratio's own error sits near 14%, inside the +-30%
      // window being asserted. Looser combos are reported as noise-dominated
      // rather than pretending to test the ratio.
      const bool resolvable =
          std::fabs(item.diff_mean[0]) > 10.0 * item.diff_stderr[0] &&
          std::fabs(item.diff_mean[1]) > 10.0 * item.diff_stderr[1];
      if (!resolvable) {
        item.halving_status = 0;
      } else {
        item.ratio = std::fabs(item.diff_mean[1]) / std::fabs(item.diff_mean[0]);
        item.halving_status = (item.ratio >= 0.35 && item.ratio <= 0.65) ? 1 : -1;
      }
    }
    study.items.push_back(std::move(item));
  }
  return study;
}

namespace {

void format_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, p);
}

}  // namespace

void write_weak_error_csv(std::ostream& os, const WeakErrorTable& table) {
  os << "N,replicas,mean_G,stderr,reference_G,abs_bias,signal\n";
  std::string line;
  for (const auto& row : table.rows) {
    line.clear();
    line += std::to_string(row.n) + "," + std::to_string(row.replicas) + ",";
    format_double(line, row.mean_g);
    line.push_back(',');
    format_double(line, row.stderr_);
    line.push_back(',');
    format_double(line, row.reference_g);
    line.push_back(',');
    format_double(line, row.abs_bias);
    line += row.signal ? ",1\n" : ",0\n";
    os << line;
  }
}

std::string rate_fit_json(const WeakErrorTable& table, const RateFit& fit) {
  std::ostringstream os;
  os.precision(17);
  os << "{\n";
  os << "  \"slope\": " << fit.slope << ",\n";
  os << "  \"intercept\": " << fit.intercept << ",\n";
  os << "  \"ci_half_width\": " << fit.ci_half_width << ",\n";
  os << "  \"points_used\": " << fit.points_used << ",\n";
  os << "  \"conclusive\": " << (fit.conclusive ? "true" : "false") << ",\n";
  os << "  \"diagnostics\": \"" << fit.diagnostics << "\",\n";
  os << "  \"reference_value\": " << table.reference_value << ",\n";
  os << "  \"reference_stderr\": " << table.reference_stderr << ",\n";
  os << "  \"reference_ensemble\": " << table.reference_ensemble << "\n";
  os << "}\n";
  return os.str();
}

}  // namespace mvlab

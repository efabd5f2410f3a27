#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvlab/branching.hpp"
#include "mvlab/functionals.hpp"
#include "mvlab/lifted.hpp"
#include "mvlab/scenario.hpp"

namespace mvlab {

// --- weak-error study -------------------------------------------------------

struct WeakErrorRow {
  std::size_t n = 0;         // population count
  std::size_t replicas = 0;  // independent runs at this N
  double mean_g = 0.0;
  double stderr_ = 0.0;
  double reference_g = 0.0;
  double abs_bias = 0.0;
  bool signal = false;  // |bias| > 3 stderr
};

struct WeakErrorTable {
  std::vector<WeakErrorRow> rows;  // sorted by N ascending
  double reference_value = 0.0;
  double reference_stderr = 0.0;
  std::size_t reference_ensemble = 0;
};

struct StudySettings {
  std::vector<std::size_t> n_list = {8, 16, 32, 64, 128, 256};
  // R(N) = min(cap, ceil(replica_factor * N^2)): replica counts scale so the
  // Monte Carlo stderr keeps pace with the O(1/N) bias.
  double replica_factor = 4.0;
  std::size_t replica_cap = 100'000;
  std::size_t reference_ensemble = 4096;  // must dominate max(N)
  std::size_t reference_batches = 8;
  SimGrid grid;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::size_t particle_cap = 1'000'000;
};

std::size_t replica_count(const StudySettings& s, std::size_t n);

// Per N: R(N) independent branching runs of N populations, G at the terminal
// empirical measure, compared against one shared lifted reference value.
WeakErrorTable weak_error_study(const Scenario& scenario,
                                const CylinderFunctional& g,
                                const StudySettings& settings);

// --- rate fit ----------------------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double ci_half_width = 0.0;  // 95% on the slope
  std::size_t points_used = 0;
  bool conclusive = false;
  std::string diagnostics;
};

// Least squares of log |bias| against log N over the signal-dominated rows.
// Inconclusive (never fabricated) when fewer than 3 rows carry signal or the
// reference stderr exceeds a third of the smallest fitted bias.
RateFit fit_rate(const WeakErrorTable& table);

// --- structural checks --------------------------------------------------------

struct TimeContinuityResult {
  struct Item {
    double t = 0.0;
    double s = 0.0;
    double distance = 0.0;
    double quotient = 0.0;  // distance / sqrt(s - t)
  };
  std::vector<Item> items;
  double max_quotient = 0.0;
  double bound = 0.0;  // explicit constant from the declared bounds
  bool passed = false;
};

// Hoelder-1/2 time continuity of a measure flow: bounded-Lipschitz distance
// between snapshots at gaps shrinking through {T/4, T/16, T/64}, quotient
// checked against the explicit constant
//   E[#K_0] exp(gamma_bar M T) M (sqrt(T)(1 + gamma_bar) + d).
// max_support > 0 coarsens snapshots before the LP; the certified coarsening
// error is added to each distance.
TimeContinuityResult time_continuity_check(
    const std::vector<PointMeasure>& measures, const SimGrid& grid,
    const CoefficientBounds& bounds, double initial_count, std::size_t dim,
    std::size_t max_support = 0);

// Same check over explicit (t, s) pairs; t == s contributes quotient 0.
TimeContinuityResult time_continuity_check(
    const std::vector<PointMeasure>& measures, const SimGrid& grid,
    const CoefficientBounds& bounds, double initial_count, std::size_t dim,
    std::span<const std::pair<double, double>> pairs,
    std::size_t max_support = 0);

struct MassGrowthResult {
  bool passed = false;
  double worst_margin = 0.0;  // min over pairs of bound + slack - observed
  double worst_t = 0.0;
  double worst_s = 0.0;
};

// Verifies mean(s) <= mean(t) exp(gamma_bar M (s-t)) + 3 stderr(s) over all
// ordered grid pairs.
MassGrowthResult mass_growth_check(const MassStatistics& stats, double gamma_bar,
                                   double m_bound);

// --- check battery ------------------------------------------------------------

struct BatteryItem {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct BatteryReport {
  std::vector<BatteryItem> items;
  bool all_passed = true;

  void add(BatteryItem item) {
    all_passed = all_passed && item.passed;
    items.push_back(std::move(item));
  }
};

struct BatterySettings {
  SimGrid grid;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::size_t ensemble_runs = 64;     // branching runs per scenario
  std::size_t populations = 64;       // N per run
  std::size_t ito_replicas = 200;     // runs for the martingale mean
  std::size_t lifted_ensemble = 2048; // Mp for flow-based items
  std::size_t sandwich_pairs = 200;   // metric equivalence sample
};

// Runs the structural battery for one scenario: Fokker-Planck residuals,
// empirical Ito residuals, mass growth, time continuity and the metric
// equivalence sandwich.
BatteryReport run_check_battery(const Scenario& scenario,
                                const BatterySettings& settings);

// Metric sandwich alone (scenario independent): 1/2 d <= W1bar <= 2 d on
// random measure pairs; returns the number of violations.
std::size_t metric_sandwich_violations(std::size_t pairs, std::uint64_t seed,
                                       double tolerance = 1e-9);

// The three cylinder functionals used by the structural batteries.
std::vector<TimeCylinderFunctional> ito_battery_functionals(std::size_t dim);

// Terminal-time agreement between the lifted reference flow and the
// ensemble-averaged branching estimate, measured on a shared snapped lattice.
struct FlowAgreementResult {
  double distance = 0.0;       // bounded-Lipschitz value on the lattice
  double lattice_bound = 0.0;  // certified snapping error
  double lifted_mass = 0.0;
  double branching_mass = 0.0;
  std::size_t union_support = 0;
};

FlowAgreementResult flow_agreement(const Scenario& scenario,
                                   std::size_t populations, std::size_t runs,
                                   std::size_t lifted_ensemble,
                                   const SimGrid& grid, double lattice_step,
                                   std::uint64_t seed, unsigned workers);

// Empirical Ito residuals across dt levels with common random numbers:
// level l uses dt = coarse_dt / 2^l with identical jump-lane draws, so the
// paired level differences isolate the O(dt) discretization bias.
struct ItoDtStudy {
  struct Item {
    std::string functional;
    double mean_finest = 0.0;
    double stderr_finest = 0.0;
    std::vector<double> diff_mean;    // consecutive-level CRN differences
    std::vector<double> diff_stderr;
    bool mean_zero_pass = false;
    int halving_status = 0;  // 1 = ratio in window, 0 = noise-dominated, -1 = fail
    double ratio = 0.0;      // |diff_mean[1]| / |diff_mean[0]|
  };
  std::vector<Item> items;
};

ItoDtStudy ito_dt_study(const Scenario& scenario, std::size_t populations,
                        std::size_t replicas, double coarse_dt, double horizon,
                        std::size_t levels, std::uint64_t seed, unsigned workers);

// CSV / JSON emission for study artifacts.
void write_weak_error_csv(std::ostream& os, const WeakErrorTable& table);
std::string rate_fit_json(const WeakErrorTable& table, const RateFit& fit);

}  // namespace mvlab

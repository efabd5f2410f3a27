#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "mvlab/coefficients.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/scenario.hpp"

namespace mvlab {

// One branching event: at `time`, particle `parent` of population `replica`
// dies and leaves `litter` children at `position`.
struct BranchEvent {
  double time = 0.0;
  std::size_t replica = 0;
  Label parent;
  std::size_t litter = 0;
  std::vector<double> position;
};

struct BranchingConfig {
  std::size_t populations = 1;  // N interacting populations
  SimGrid grid;
  std::uint64_t seed = 0;
  // Distinguishes independent repetitions in studies; folded into every
  // stream key.
  std::uint64_t run_id = 0;
  std::size_t particle_cap = 1'000'000;
};

// Read-only view of the running system handed to observers at grid points.
class SystemView {
 public:
  virtual ~SystemView() = default;
  virtual std::size_t population_count() const = 0;
  virtual std::size_t total_particles() const = 0;
  virtual void for_each_particle(
      const std::function<void(std::size_t pop, const Label&,
                               std::span<const double> position, double birth)>& fn)
      const = 0;

  std::vector<Population> make_populations() const;
  // Canonically sorted; scale = 1/N gives the empirical measure.
  PointMeasure make_measure(double scale) const;
};

class BranchingObserver {
 public:
  virtual ~BranchingObserver() = default;
  virtual void on_grid_point(std::size_t /*index*/, double /*time*/,
                             const SystemView& /*view*/) {}
  virtual void on_event(const BranchEvent& /*event*/) {}
};

// Runs the interacting branching system. Positions follow Euler-Maruyama
// within grid cells against the empirical measure frozen at the start of each
// event-free segment; branching uses exact exponential(gamma_bar) candidate
// clocks thinned at rate gamma / gamma_bar, with the candidate position
// advanced by a partial Euler step to the candidate time. Offspring replace
// the parent at its position under Ulam-Harris-Neveu labels.
//
// Deterministic: every random draw comes from a counter-based stream keyed by
// (seed, run_id, population, lineage, lane), so two runs with equal inputs
// are bit-identical regardless of scheduling.
void run_branching(const BranchingConfig& config, const CoefficientSet& coeffs,
                   const InitialCondition& init, BranchingObserver& observer);

struct BranchingTrajectory {
  SimGrid grid;
  std::size_t populations = 1;
  std::vector<PointMeasure> measures;                 // per grid point
  std::vector<std::vector<Population>> population_log;  // per grid point
  std::vector<BranchEvent> events;
};

BranchingTrajectory simulate_branching(std::size_t populations,
                                       const CoefficientSet& coeffs,
                                       const InitialCondition& init,
                                       const SimGrid& grid, std::uint64_t seed,
                                       std::size_t particle_cap = 1'000'000,
                                       std::uint64_t run_id = 0);

// Per-time sample mean / variance of the total particle count over an
// ensemble of trajectories on a common grid.
struct MassStatistics {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> stderr_;
  std::size_t ensemble_size = 0;
};

MassStatistics mass_statistics(std::span<const BranchingTrajectory> ensemble);
MassStatistics mass_statistics_from_counts(
    const std::vector<std::vector<double>>& counts_by_traj,
    const SimGrid& grid);

// Trajectory export: `time,x1,...,xd,weight` rows for each grid point, and
// the event log as `time,replica,parent_label,litter` (labels dot-joined,
// root = empty string).
void write_trajectory_csv(std::ostream& os, const BranchingTrajectory& traj);
void write_events_csv(std::ostream& os, const BranchingTrajectory& traj);

}  // namespace mvlab

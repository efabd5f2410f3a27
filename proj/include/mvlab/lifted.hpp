#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlab/coefficients.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/scenario.hpp"

namespace mvlab {

// Ensemble of the lifted (position, weight) system at a fixed time. Weights
// stay inside [z0 exp(-gamma_bar M t), z0 exp(gamma_bar M t)] relative to
// their initial values; the exponential weight update makes the sandwich
// exact and every weight positive.
struct WeightedEnsemble {
  std::size_t dim = 1;
  double time = 0.0;
  std::vector<double> y;  // size() * dim, row per particle
  std::vector<double> z;

  std::size_t size() const { return z.size(); }
  std::span<const double> position(std::size_t i) const {
    return {y.data() + i * dim, dim};
  }
};

// Atom at each particle position with weight scale * z. scale = 1/size for
// the empirical law of the ensemble. Canonically sorted.
PointMeasure project_T_star(const WeightedEnsemble& ens, double scale);

// Sampling description of the lift of a finite measure: positions drawn from
// the normalized measure (the origin for the zero measure), weight equal to
// the total mass for every sample.
struct PhiDescriptor {
  std::size_t dim = 1;
  double total_mass = 0.0;
  std::vector<std::vector<double>> locations;
  std::vector<double> cumulative;  // categorical sampler over locations

  void sample(RngStream& rng, std::span<double> y_out, double& z_out) const;
};

PhiDescriptor lift_Phi(const PointMeasure& mu);

// Initial condition for a lifted run: either the scenario's analytic initial
// law (position law with weight = initial mass) or the lift of a concrete
// point measure.
struct LiftedInit {
  const InitialCondition* scenario_init = nullptr;
  const PhiDescriptor* descriptor = nullptr;

  static LiftedInit from_scenario(const InitialCondition& init) {
    LiftedInit li;
    li.scenario_init = &init;
    return li;
  }
  static LiftedInit from_descriptor(const PhiDescriptor& phi) {
    LiftedInit li;
    li.descriptor = &phi;
    return li;
  }
};

struct LiftedConfig {
  std::size_t ensemble = 1024;  // Mp
  SimGrid grid;
  double t0 = 0.0;  // absolute start time (coefficients see t0 + grid time)
  std::uint64_t seed = 0;
  std::uint64_t run_id = 0;
};

// Deterministic reference flow: the projected measure at every grid time.
struct ReferenceFlow {
  SimGrid grid;
  double t0 = 0.0;
  std::size_t ensemble = 0;
  std::string method;  // "self-interaction" or "picard(<iterations>)"
  std::vector<PointMeasure> measures;
  std::vector<double> iteration_gaps;  // picard only

  const PointMeasure& terminal() const { return measures.back(); }
};

// Self-interacting weighted ensemble: per step the measure argument is the
// ensemble's own projection, each particle moves by Euler-Maruyama and its
// weight multiplies exp(c dt).
ReferenceFlow simulate_lifted_self(const LiftedConfig& config,
                                   const CoefficientSet& coeffs,
                                   const LiftedInit& init);

// Picard iteration: iteration 0 freezes the measure flow at the
// (time-constant) initial projection; iteration k+1 runs the ensemble against
// iteration k's stored flow, replaying the same Brownian draws. Returns the
// last flow together with the sup-over-time bounded-Lipschitz gap between
// successive iterations. gap_coarsen_radius > 0 coarsens supports before the
// gap distances (certified error added to the gap).
ReferenceFlow picard_solve(const LiftedConfig& config, const CoefficientSet& coeffs,
                           const LiftedInit& init, std::size_t iterations,
                           double gap_coarsen_radius = 0.0);

}  // namespace mvlab

#pragma once

#include <vector>

#include "mvlab/measure.hpp"

namespace mvlab {

// Exact distances between finite atomic measures.
//
// bounded_lipschitz computes  sup { <f, mu - nu> : |f|_inf <= 1, |f|_Lip <= 1 }
// (Euclidean Lipschitz seminorm). The optimum and a maximizing f on the union
// support are obtained from the equivalent minimum-cost transshipment LP:
// its duals are exactly the f values, feasible for every box and pairwise
// Lipschitz constraint, with matching objective by strong duality.
//
// extended_w1 pads the lighter measure with mass at a cemetery point and
// solves the balanced transport LP with ground cost |x-y| ^ 1 between real
// atoms and unit creation/destruction cost at the cemetery.

struct BlWitness {
  double value = 0.0;
  // f values on the (deduplicated) union support.
  std::vector<std::vector<double>> points;
  std::vector<double> f;
  std::vector<double> signed_weight;  // mu - nu per point
};

double bounded_lipschitz(const PointMeasure& mu, const PointMeasure& nu);
BlWitness bounded_lipschitz_witness(const PointMeasure& mu, const PointMeasure& nu);

double extended_w1(const PointMeasure& mu, const PointMeasure& nu);

// Independent oracle: exhaustive branch-and-prune search over f values
// discretized with the given resolution, feasibility checked directly
// against the box and pairwise constraints. Lower bound on the true value,
// converging as resolution -> 0. At most 5 atoms on the union support.
double brute_force_bl(const PointMeasure& mu, const PointMeasure& nu,
                      double resolution);

// Clusters atoms within `radius` of a representative (sum of weights at the
// representative's location). Returns the coarsened measure and the additive
// bounded-Lipschitz error bound radius * mass(mu).
struct CoarsenResult {
  PointMeasure measure;
  double error_bound = 0.0;
};
CoarsenResult coarsen(const PointMeasure& mu, double radius);

// Doubles the radius from a span-derived floor until the support fits within
// `target` atoms. target == 0 or a small support returns the measure as is.
CoarsenResult coarsen_to_support(const PointMeasure& mu, std::size_t target);

// Snaps every coordinate to the lattice (step Z)^d and merges weights. Each
// atom moves at most step sqrt(d) / 2, so the certified bound is
// step sqrt(d) / 2 * mass. Two measures snapped to the same lattice share
// support points, which makes their signed difference collapse before the LP.
CoarsenResult lattice_coarsen(const PointMeasure& mu, double step);

// Hard cap on the union support accepted by the LP-based distances.
inline constexpr std::size_t kMaxDistanceSupport = 4000;

}  // namespace mvlab

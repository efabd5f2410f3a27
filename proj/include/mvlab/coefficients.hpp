#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvlab/measure.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

// Declared bounds of a coefficient tuple: sup-norm bound M, Lipschitz
// constant L (in |x - y| + d(mu, nu)), death-rate cap gamma_bar, ellipticity
// floor eps0 for sigma sigma^T, and the maximal litter size.
struct CoefficientBounds {
  double M = 1.0;
  double L = 1.0;
  double gamma_bar = 1.0;
  double eps0 = 1.0;
  std::size_t L_max = 2;
};

// Measure dependence enters coefficients only through a declared list of
// bounded-Lipschitz interaction pairings <psi_j, mu>; this keeps the
// Lipschitz constant in the measure argument checkable.
struct InteractionFn {
  std::string name;
  std::function<double(std::span<const double>)> eval;
  double sup_norm = 1.0;
  double lip = 1.0;
};

using Pairings = std::span<const double>;

// Immutable coefficient tuple (b, sigma, gamma, (p_l)) with pure evaluation;
// safe for concurrent use from many replicas.
struct CoefficientSet {
  std::size_t dim = 1;
  CoefficientBounds bounds;
  std::vector<InteractionFn> interactions;

  // out_b: d values.
  std::function<void(double t, std::span<const double> x, Pairings,
                     std::span<double> out_b)>
      drift;
  // out_sigma: d*d row-major.
  std::function<void(double t, std::span<const double> x, Pairings,
                     std::span<double> out_sigma)>
      diffusion;
  std::function<double(double t, std::span<const double> x, Pairings)> death_rate;
  // out_p: L_max + 1 probabilities summing to 1.
  std::function<void(double t, std::span<const double> x, Pairings,
                     std::span<double> out_p)>
      progeny;

  std::vector<double> pairings_of(const PointMeasure& mu) const;
  std::vector<double> progeny_at(double t, std::span<const double> x,
                                 Pairings p) const;
};

// Net growth rate c = gamma * (sum_l l p_l - 1); |c| <= gamma_bar * (M + 1).
double net_growth_c(const CoefficientSet& coeffs, double t,
                    std::span<const double> x, Pairings pairings);
double net_growth_c(const CoefficientSet& coeffs, double t,
                    std::span<const double> x, const PointMeasure& mu);

// Partition of [0,1) into intervals I_l of length p_l; cumulative has
// L_max + 2 entries with cumulative.front() == 0 and cumulative.back() == 1.
struct OffspringPartition {
  std::vector<double> cumulative;

  static OffspringPartition from_probabilities(std::span<const double> p);
  std::size_t litter_count() const { return cumulative.size() - 1; }
  double interval_length(std::size_t l) const {
    return cumulative[l + 1] - cumulative[l];
  }
};

// The unique l with u in I_l; throws DomainError for u outside [0,1).
std::size_t sample_progeny(double u, const OffspringPartition& part);

// Empirical validation of the standing assumptions over a random probe plan.
struct ProbePlan {
  std::size_t points = 256;       // single-point probes
  std::size_t pairs = 256;        // perturbation pairs for Lipschitz quotients
  double t_max = 1.0;
  double box_halfwidth = 3.0;     // probe positions in [-h, h]^d
  std::size_t measure_atoms = 6;  // atoms per probe measure
  double max_atom_weight = 1.0;
  std::uint64_t seed = 20240901;
};

struct ValidationReport {
  double sup_drift = 0.0;
  double sup_diffusion = 0.0;      // Frobenius norm
  double sup_mean_litter = 0.0;    // sup of sum_l l p_l
  double max_gamma = 0.0;
  double min_gamma = 0.0;
  double max_progeny_sum_error = 0.0;  // |sum_l p_l - 1|
  double lipschitz_quotient_b = 0.0;
  double lipschitz_quotient_sigma = 0.0;
  double lipschitz_quotient_c = 0.0;
  double min_eigenvalue = 0.0;  // of sigma sigma^T over probes
  bool passed = true;
  std::vector<std::string> violations;
};

ValidationReport validate_assumptions(const CoefficientSet& coeffs,
                                      const ProbePlan& plan);

}  // namespace mvlab

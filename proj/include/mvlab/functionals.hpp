#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvlab/branching.hpp"
#include "mvlab/coefficients.hpp"
#include "mvlab/lifted.hpp"
#include "mvlab/measure.hpp"

namespace mvlab {

// --- scalar test-function catalog -----------------------------------------

// C^2 scalar field with analytic gradient and Hessian plus declared bounds.
struct ScalarField {
  std::string name;
  std::function<double(std::span<const double>)> eval;
  std::function<void(std::span<const double>, std::span<double>)> grad;  // d
  std::function<void(std::span<const double>, std::span<double>)> hess;  // d*d
  double sup_norm = 1.0;
  double lip = 1.0;
  double hess_bound = 1.0;
  bool bounded = true;
};

ScalarField constant_field(double value, std::size_t dim);
ScalarField coordinate_field(std::size_t axis, std::size_t dim);
ScalarField gaussian_bump_field(std::vector<double> center, double width);
ScalarField tanh_coordinate_field(std::size_t axis, double alpha, std::size_t dim);
ScalarField product_field(const ScalarField& a, const ScalarField& b,
                          std::size_t dim);
ScalarField field_from_name(const std::string& name, std::size_t dim);

// --- cylinder functionals ---------------------------------------------------

// Outer function phi(u) = c0 + a.u + u^T B u / 2 on R^m. A quadratic outer
// keeps every derivative required of the test functionals analytic: the
// second derivative is the constant matrix B.
struct QuadraticOuter {
  double c0 = 0.0;
  std::vector<double> a;  // m
  std::vector<double> B;  // m*m symmetric (may be empty = zero)

  std::size_t arity() const { return a.size(); }
  double eval(std::span<const double> u) const;
  void grad(std::span<const double> u, std::span<double> out) const;
  double hess(std::size_t j, std::size_t k) const;
};

// G(mu) = phi(<f_1,mu>, ..., <f_m,mu>): evaluation depends on mu only through
// the m pairings. Flat derivatives are chain rules over the pairing vector.
class CylinderFunctional {
 public:
  CylinderFunctional() = default;
  CylinderFunctional(std::vector<ScalarField> inner, QuadraticOuter outer);

  std::size_t arity() const { return inner_.size(); }
  const std::vector<ScalarField>& inner() const { return inner_; }
  const QuadraticOuter& outer() const { return outer_; }

  std::vector<double> pairing_vector(const PointMeasure& mu) const;
  double eval_at(std::span<const double> pairings) const;

  double flat_derivative_at(std::span<const double> pairings,
                            std::span<const double> x) const;
  double second_flat_derivative_at(std::span<const double> pairings,
                                   std::span<const double> x,
                                   std::span<const double> y) const;
  // D_mu G(mu, x) = grad_x deltaG/deltamu; out has d entries.
  void intrinsic_derivative_at(std::span<const double> pairings,
                               std::span<const double> x,
                               std::span<double> out) const;
  // D_x^2 deltaG/deltamu(mu, x); out is d*d.
  void flat_hessian_at(std::span<const double> pairings, std::span<const double> x,
                       std::span<double> out) const;
  // D_mu^2 G(mu, x, y); out is d*d.
  void second_intrinsic_at(std::span<const double> pairings,
                           std::span<const double> x, std::span<const double> y,
                           std::span<double> out) const;

 private:
  std::vector<ScalarField> inner_;
  QuadraticOuter outer_;
};

// Spec operations.
double eval_G(const CylinderFunctional& g, const PointMeasure& mu);
double flat_derivative_G(const CylinderFunctional& g, const PointMeasure& mu,
                         std::span<const double> x);
double second_flat_derivative_G(const CylinderFunctional& g, const PointMeasure& mu,
                                std::span<const double> x,
                                std::span<const double> y);

// Convenience constructors.
CylinderFunctional mass_functional(std::size_t dim);
CylinderFunctional pairing_functional(ScalarField f);          // G = <f, mu>
CylinderFunctional squared_pairing_functional(ScalarField f);  // G = <f, mu>^2
CylinderFunctional product_pairing_functional(ScalarField f1, ScalarField f2);

// Time-dependent cylinder F(t, mu) = w0(t) + w1(t) G(mu) with analytic time
// derivative.
struct TimeWeight {
  std::function<double(double)> value = [](double) { return 1.0; };
  std::function<double(double)> deriv = [](double) { return 0.0; };
};
TimeWeight constant_weight(double v);
TimeWeight linear_weight(double a, double b);  // a + b t

struct TimeCylinderFunctional {
  TimeWeight w0 = constant_weight(0.0);
  TimeWeight w1 = constant_weight(1.0);
  CylinderFunctional g;
  std::string name;

  double eval(double t, std::span<const double> pairings) const {
    return w0.value(t) + w1.value(t) * g.eval_at(pairings);
  }
  double time_derivative(double t, std::span<const double> pairings) const {
    return w0.deriv(t) + w1.deriv(t) * g.eval_at(pairings);
  }
};

TimeCylinderFunctional static_functional(CylinderFunctional g, std::string name);

// --- time-space test functions for the weak Fokker-Planck identity ---------

struct TimeSpaceFunction {
  std::string name;
  std::function<double(double, std::span<const double>)> eval;
  std::function<double(double, std::span<const double>)> time_deriv;
  std::function<void(double, std::span<const double>, std::span<double>)> grad;
  std::function<void(double, std::span<const double>, std::span<double>)> hess;
  // Declared bounds (used for residual tolerances).
  double sup_norm = 1.0;
  double sup_time_deriv = 0.0;
  double sup_grad = 1.0;
  double sup_hess = 1.0;
};

TimeSpaceFunction static_test_function(const ScalarField& f);
TimeSpaceFunction time_scaled_test_function(const ScalarField& f, double rate);

// Weak Fokker-Planck residual along a reference flow:
//   <f_T, mu_T> - <f_0, mu_0>
//     - sum_j dt <d_t f + b.grad f + tr(Hess f sigma sigma^T)/2 + c f, mu_j>.
double fp_residual(const TimeSpaceFunction& f, const ReferenceFlow& flow,
                   const CoefficientSet& coeffs);

// Drift of the environment-measure functional identity at (t, mu):
//   d_t F + < L (dF/dmu) + c dF/dmu , mu >.
double ito_drift_environment(const TimeCylinderFunctional& f, double t,
                             const PointMeasure& mu, const CoefficientSet& coeffs);

// Per-run residual of the empirical-measure functional identity: the
// integrated drift, the 1/(2N) trace correction and the exact jump
// compensator are subtracted from F(T) - F(0); what remains estimates the
// martingale term (mean zero over an ensemble). Requires the event log.
double ito_residual_empirical(const TimeCylinderFunctional& f,
                              const BranchingTrajectory& traj,
                              const CoefficientSet& coeffs);

// Streaming accumulator for the same residual, usable inside lean ensemble
// runs without storing trajectories. Feed grid points in order.
class ItoResidualAccumulator {
 public:
  ItoResidualAccumulator(const TimeCylinderFunctional* f,
                         const CoefficientSet* coeffs, std::size_t populations,
                         double dt, std::size_t steps);
  void on_grid_point(std::size_t index, double time, const PointMeasure& mu);
  double residual() const { return residual_; }

 private:
  const TimeCylinderFunctional* f_;
  const CoefficientSet* coeffs_;
  double inv_n_;
  double dt_;
  std::size_t steps_;
  double residual_ = 0.0;
  double f0_ = 0.0;
};

// --- value function ---------------------------------------------------------

struct ValueSolverSettings {
  std::size_t ensemble = 1024;  // lifted particles per restart
  std::size_t restarts = 8;     // independent restarts for the stderr
  SimGrid grid;                 // the [0, T] grid; sub-grids are derived
  std::uint64_t seed = 0;
};

struct ValueEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  bool exact = false;  // t == T: no simulation
};

// U(t, mu) = G at the terminal measure of the lifted flow started from the
// lift of mu at time t. t must be grid-aligned and <= T.
ValueEstimate value_function_U(double t, const PointMeasure& mu,
                               const CylinderFunctional& g,
                               const CoefficientSet& coeffs,
                               const ValueSolverSettings& solver);

struct FlowConstancyResult {
  struct Sample {
    double s = 0.0;
    double value = 0.0;
    double stderr_ = 0.0;
    double deviation = 0.0;
    double combined_stderr = 0.0;
  };
  double baseline = 0.0;
  double baseline_stderr = 0.0;
  std::vector<Sample> samples;
  double max_deviation = 0.0;
  // max over s of |U(s) - U(0)| / combined stderr; <= 3 passes.
  double worst_sigma_ratio = 0.0;
};

// Runs one reference flow from (0, the sampled initial projection), then
// re-estimates U at each requested time by restarted nested simulation and
// compares with U at time 0.
FlowConstancyResult flow_constancy_check(const CylinderFunctional& g,
                                         const CoefficientSet& coeffs,
                                         const InitialCondition& init,
                                         std::span<const double> times,
                                         const ValueSolverSettings& solver);

}  // namespace mvlab

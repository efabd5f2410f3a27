#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvlab/branching.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/functionals.hpp"
#include "mvlab/numeric.hpp"
#include "mvlab/scenario.hpp"

using namespace mvlab;

namespace {

Scenario constant_scenario(double gamma, std::vector<double> progeny, double b0,
                           double sigma0, std::size_t k0) {
  Scenario s = make_constant_scenario();
  s.params = {{"b", b0}, {"sigma", sigma0}, {"gamma", gamma}};
  for (std::size_t l = 0; l < progeny.size(); ++l)
    if (progeny[l] != 0.0) s.params["p" + std::to_string(l)] = progeny[l];
  s.bounds.L_max = std::max<std::size_t>(progeny.size() - 1, 2);
  s.bounds.gamma_bar = std::max(gamma, 1.0);
  s.bounds.M = std::max({std::fabs(b0), sigma0, 2.0});
  s.init.count = k0;
  s.init.kind = InitialCondition::Kind::kPoint;
  s.init.mean = {0.0};
  return s;
}

PointMeasure measure_1d(std::initializer_list<std::pair<double, double>> atoms) {
  PointMeasure mu(1);
  for (const auto& [x, w] : atoms) mu.push_atom({x}, w);
  return mu;
}

// Centered finite difference of G in the flat direction delta_x, with
// Richardson extrapolation cancelling the eps^2 term.
double fd_flat_derivative(const CylinderFunctional& g, const PointMeasure& mu,
                          std::span<const double> x, double eps) {
  auto diff = [&](double e) {
    const double up = eval_G(g, add_atom(mu, x, e));
    const double dn = eval_G(g, add_atom(mu, x, -e));
    return (up - dn) / (2.0 * e);
  };
  const double d1 = diff(eps);
  const double d2 = diff(2.0 * eps);
  return (4.0 * d1 - d2) / 3.0;
}

RngStream test_rng(std::uint64_t salt) {
  return RngStream(2025, StreamTag::kTest, {salt});
}

}  // namespace

TEST_CASE("eval_G examples") {
  const auto mu2 = measure_1d({{2.0, 1.0}});
  CHECK(eval_G(mass_functional(1), mu2) == doctest::Approx(1.0));
  const CylinderFunctional sq = squared_pairing_functional(coordinate_field(0, 1));
  CHECK(eval_G(sq, mu2) == doctest::Approx(4.0));
  CHECK(eval_G(sq, PointMeasure(1)) == doctest::Approx(0.0));
}

TEST_CASE("flat derivative closed forms") {
  const std::vector<double> x3{3.0};
  CHECK(flat_derivative_G(mass_functional(1), measure_1d({{1.0, 2.5}}), x3) ==
        doctest::Approx(1.0));
  const CylinderFunctional sq = squared_pairing_functional(coordinate_field(0, 1));
  const auto mu = measure_1d({{2.0, 1.0}});
  // d/dmu <x,mu>^2 = 2 <x,mu> x = 2*2*3
  CHECK(flat_derivative_G(sq, mu, x3) == doctest::Approx(12.0));
}

TEST_CASE("second flat derivative closed forms") {
  const auto mu = measure_1d({{0.5, 1.0}});
  const std::vector<double> x{1.0}, y{2.0};
  CHECK(second_flat_derivative_G(pairing_functional(coordinate_field(0, 1)), mu, x,
                                 y) == doctest::Approx(0.0));
  // phi(u) = u^2/2 with f == 1: second derivative is 1 everywhere
  QuadraticOuter outer;
  outer.a = {0.0};
  outer.B = {1.0};
  const CylinderFunctional half_sq({constant_field(1.0, 1)}, outer);
  CHECK(second_flat_derivative_G(half_sq, mu, x, y) == doctest::Approx(1.0));
}

TEST_CASE("chain rule vs finite differences on random functionals") {
  RngStream rng = test_rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    // Random two-pairing quadratic outer over bump/tanh inner fields.
    QuadraticOuter outer;
    outer.c0 = rng.u01();
    outer.a = {2 * rng.u01() - 1, 2 * rng.u01() - 1};
    const double b01 = 2 * rng.u01() - 1;
    outer.B = {2 * rng.u01() - 1, b01, b01, 2 * rng.u01() - 1};
    std::vector<ScalarField> inner;
    inner.push_back(gaussian_bump_field({2 * rng.u01() - 1}, 0.5 + rng.u01()));
    inner.push_back(tanh_coordinate_field(0, 0.5 + rng.u01(), 1));
    const CylinderFunctional g(inner, outer);

    PointMeasure mu(1);
    const std::size_t atoms = 1 + static_cast<std::size_t>(rng.u01() * 4);
    for (std::size_t i = 0; i < atoms; ++i)
      mu.push_atom({3 * rng.u01() - 1.5}, 0.2 + rng.u01());
    // perturbation point must carry mass for the downward difference
    const std::vector<double> x{3 * rng.u01() - 1.5};
    mu.push_atom(x, 0.3 + rng.u01());

    const double analytic = flat_derivative_G(g, mu, x);
    const double fd = fd_flat_derivative(g, mu, x, 1e-5);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("second derivative vs nested finite differences") {
  RngStream rng = test_rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const CylinderFunctional g =
        squared_pairing_functional(gaussian_bump_field({0.0}, 1.0));
    PointMeasure mu(1);
    for (int i = 0; i < 3; ++i) mu.push_atom({2 * rng.u01() - 1}, 0.3 + rng.u01());
    const std::vector<double> x{2 * rng.u01() - 1};
    const std::vector<double> y{2 * rng.u01() - 1};
    mu.push_atom(y, 0.5);  // mass at the inner perturbation point
    const double eps = 1e-4;
    // nested eps-perturbations of the flat derivative
    const double up = flat_derivative_G(g, add_atom(mu, y, eps), x);
    const double dn = flat_derivative_G(g, add_atom(mu, y, -eps), x);
    const double fd = (up - dn) / (2.0 * eps);
    CHECK(second_flat_derivative_G(g, mu, x, y) ==
          doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("ito_drift_environment closed forms") {
  const Scenario dead = constant_scenario(0.5, {1.0}, 0.0, 1.0, 1);
  const Scenario crit = constant_scenario(0.5, {0.0, 1.0}, 0.0, 1.0, 1);
  const auto mu = measure_1d({{0.4, 1.5}, {-0.2, 0.5}});
  const TimeCylinderFunctional mass_f = static_functional(mass_functional(1), "m");
  CHECK(ito_drift_environment(mass_f, 0.3, mu, crit.coefficients()) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ito_drift_environment(mass_f, 0.3, mu, dead.coefficients()) ==
        doctest::Approx(-0.5 * 2.0).epsilon(1e-12));
  // F(t, mu) = t: pure time term
  TimeCylinderFunctional time_f;
  time_f.w0 = linear_weight(0.0, 1.0);
  time_f.w1 = constant_weight(0.0);
  time_f.g = mass_functional(1);
  CHECK(ito_drift_environment(time_f, 0.9, mu, dead.coefficients()) ==
        doctest::Approx(1.0));
}

TEST_CASE("environment identity integrates exactly along deterministic flows") {
  // Pure death: mass(t) = m0 e^{ct} exactly in the lifted scheme, so the
  // residual equals the closed-form Riemann gap; halving dt halves it.
  const double c = -0.5;
  Scenario s = constant_scenario(0.5, {1.0}, 0.0, 1.0, 4);
  const CoefficientSet coeffs = s.coefficients();
  const TimeCylinderFunctional mass_f = static_functional(mass_functional(1), "m");
  auto residual_at = [&](double dt) {
    LiftedConfig cfg;
    cfg.ensemble = 64;
    cfg.grid = SimGrid(1.0, dt);
    cfg.seed = 77;
    const ReferenceFlow flow =
        simulate_lifted_self(cfg, coeffs, LiftedInit::from_scenario(s.init));
    double acc = eval_G(mass_f.g, flow.measures.back()) -
                 eval_G(mass_f.g, flow.measures.front());
    for (std::size_t j = 0; j < cfg.grid.steps; ++j)
      acc -= dt * ito_drift_environment(mass_f, cfg.grid.time(j),
                                        flow.measures[j], coeffs);
    return acc;
  };
  const double r1 = residual_at(1.0 / 32.0);
  const double r2 = residual_at(1.0 / 64.0);
  const double m0 = 4.0;
  auto closed_form = [&](double dt) {
    double lr = 0.0;
    const std::size_t n = static_cast<std::size_t>(std::llround(1.0 / dt));
    for (std::size_t j = 0; j < n; ++j) lr += dt * c * m0 * std::exp(c * j * dt);
    return m0 * (std::exp(c) - 1.0) - lr;
  };
  CHECK(r1 == doctest::Approx(closed_form(1.0 / 32.0)).epsilon(1e-10));
  CHECK(r2 == doctest::Approx(closed_form(1.0 / 64.0)).epsilon(1e-10));
  const double slope = std::log2(std::fabs(r1) / std::fabs(r2));
  CHECK(slope >= 0.8);
}

TEST_CASE("fp_residual: conserved mass and martingale first moment") {
  {
    Scenario s = constant_scenario(0.7, {0.0, 1.0}, 0.0, 1.0, 2);  // c = 0
    LiftedConfig cfg;
    cfg.ensemble = 256;
    cfg.grid = SimGrid(1.0, 1.0 / 32.0);
    cfg.seed = 13;
    const ReferenceFlow flow = simulate_lifted_self(
        cfg, s.coefficients(), LiftedInit::from_scenario(s.init));
    const TimeSpaceFunction one = static_test_function(constant_field(1.0, 1));
    CHECK(std::fabs(fp_residual(one, flow, s.coefficients())) <= 1e-12);
  }
  {
    // f(t,x) = x1 with b=0, sigma=1, c=0: residual is a Brownian average.
    Scenario s = constant_scenario(0.0, {1.0}, 0.0, 1.0, 1);
    LiftedConfig cfg;
    cfg.ensemble = 4096;
    cfg.grid = SimGrid(1.0, 1.0 / 32.0);
    cfg.seed = 14;
    const ReferenceFlow flow = simulate_lifted_self(
        cfg, s.coefficients(), LiftedInit::from_scenario(s.init));
    const TimeSpaceFunction coord = static_test_function(coordinate_field(0, 1));
    const double res = fp_residual(coord, flow, s.coefficients());
    CHECK(std::fabs(res) <= 5.0 / std::sqrt(4096.0));
  }
  {
    // Pure death, f == 1: the residual equals the closed-form Riemann gap.
    Scenario s = constant_scenario(0.5, {1.0}, 0.0, 1.0, 4);
    LiftedConfig cfg;
    cfg.ensemble = 64;
    cfg.grid = SimGrid(1.0, 1.0 / 64.0);
    cfg.seed = 15;
    const ReferenceFlow flow = simulate_lifted_self(
        cfg, s.coefficients(), LiftedInit::from_scenario(s.init));
    const TimeSpaceFunction one = static_test_function(constant_field(1.0, 1));
    const double res = fp_residual(one, flow, s.coefficients());
    double lr = 0.0;
    for (std::size_t j = 0; j < 64; ++j)
      lr += (1.0 / 64.0) * (-0.5) * 4.0 * std::exp(-0.5 * j / 64.0);
    const double expected = 4.0 * (std::exp(-0.5) - 1.0) - lr;
    CHECK(res == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("fp_residual requires full derivative data") {
  Scenario s = make_constant_scenario();
  LiftedConfig cfg;
  cfg.ensemble = 8;
  cfg.grid = SimGrid(0.5, 0.25);
  const ReferenceFlow flow =
      simulate_lifted_self(cfg, s.coefficients(), LiftedInit::from_scenario(s.init));
  TimeSpaceFunction crippled = static_test_function(constant_field(1.0, 1));
  crippled.hess = nullptr;
  CHECK_THROWS_AS(fp_residual(crippled, flow, s.coefficients()), ContractError);
}

TEST_CASE("ito_residual_empirical: exact zero without branching") {
  Scenario s = constant_scenario(0.0, {1.0}, 0.3, 1.0, 3);
  const SimGrid grid(1.0, 1.0 / 16.0);
  const BranchingTrajectory traj =
      simulate_branching(4, s.coefficients(), s.init, grid, 51);
  const TimeCylinderFunctional mass_f = static_functional(mass_functional(1), "m");
  CHECK(ito_residual_empirical(mass_f, traj, s.coefficients()) ==
        doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("ito_residual_empirical: martingale mean zero under branching") {
  Scenario s = constant_scenario(0.6, {0.3, 0.0, 0.7}, 0.0, 1.0, 3);
  const CoefficientSet coeffs = s.coefficients();
  const SimGrid grid(1.0, 1.0 / 32.0);
  const TimeCylinderFunctional mass_f = static_functional(mass_functional(1), "m");
  const std::size_t runs = 500;
  std::vector<double> residuals(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    const BranchingTrajectory traj =
        simulate_branching(16, coeffs, s.init, grid, 61, 1'000'000, r);
    residuals[r] = ito_residual_empirical(mass_f, traj, coeffs);
  }
  const MeanStderr ms = mean_stderr(residuals);
  CHECK(std::fabs(ms.mean) <= 3.0 * ms.stderr_ + 1e-3);
}

TEST_CASE("ito_residual_empirical: linear first moment martingale") {
  Scenario s = constant_scenario(0.0, {1.0}, 0.5, 1.0, 2);
  const CoefficientSet coeffs = s.coefficients();
  const SimGrid grid(1.0, 1.0 / 16.0);
  const TimeCylinderFunctional coord_f = static_functional(
      pairing_functional(coordinate_field(0, 1)), "first-moment");
  const std::size_t runs = 400;
  std::vector<double> residuals(runs);
  for (std::size_t r = 0; r < runs; ++r) {
    const BranchingTrajectory traj =
        simulate_branching(8, coeffs, s.init, grid, 62, 1'000'000, r);
    residuals[r] = ito_residual_empirical(coord_f, traj, coeffs);
  }
  const MeanStderr ms = mean_stderr(residuals);
  CHECK(ms.stddev > 0.0);  // a genuine Brownian sum, not identically zero
  CHECK(std::fabs(ms.mean) <= 3.0 * ms.stderr_);
}

TEST_CASE("value function: terminal exactness and zero measure") {
  Scenario s = constant_scenario(0.5, {1.0}, 0.0, 1.0, 2);
  ValueSolverSettings solver;
  solver.ensemble = 64;
  solver.restarts = 4;
  solver.grid = SimGrid(1.0, 1.0 / 16.0);
  solver.seed = 19;
  const auto mu = measure_1d({{0.2, 1.0}, {0.7, 0.5}});
  const CylinderFunctional g = squared_pairing_functional(
      gaussian_bump_field({0.0}, 1.0));
  const ValueEstimate at_t = value_function_U(1.0, mu, g, s.coefficients(), solver);
  CHECK(at_t.exact);
  CHECK(at_t.stderr_ == 0.0);
  CHECK(at_t.value == doctest::Approx(eval_G(g, mu)));

  const ValueEstimate zero =
      value_function_U(0.5, PointMeasure(1), g, s.coefficients(), solver);
  CHECK(zero.value == doctest::Approx(eval_G(g, PointMeasure(1))).epsilon(1e-12));
}

TEST_CASE("value function: pure-death mass decays at the closed-form rate") {
  Scenario s = constant_scenario(0.5, {1.0}, 0.0, 1.0, 2);
  ValueSolverSettings solver;
  solver.ensemble = 32;
  solver.restarts = 3;
  solver.grid = SimGrid(1.0, 1.0 / 32.0);
  solver.seed = 20;
  const auto mu = measure_1d({{0.0, 1.5}, {1.0, 0.5}});
  const CylinderFunctional g = mass_functional(1);
  for (double t : {0.0, 0.5, 0.75}) {
    const ValueEstimate est = value_function_U(t, mu, g, s.coefficients(), solver);
    const double expected = mass(mu) * std::exp(-0.5 * (1.0 - t));
    CHECK(est.value == doctest::Approx(expected).epsilon(1e-10));
  }
  CHECK_THROWS_AS(
      value_function_U(0.513, mu, g, s.coefficients(), solver), DomainError);
}

TEST_CASE("flow constancy on a measure-independent scenario") {
  Scenario s = constant_scenario(0.3, {1.0}, 0.3, 1.0, 2);
  ValueSolverSettings solver;
  solver.ensemble = 2048;
  solver.restarts = 8;
  solver.grid = SimGrid(1.0, 1.0 / 32.0);
  solver.seed = 21;
  const CylinderFunctional g =
      pairing_functional(gaussian_bump_field({0.0}, 1.0));
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75};
  const FlowConstancyResult res =
      flow_constancy_check(g, s.coefficients(), s.init, times, solver);
  REQUIRE(res.samples.size() == 4);
  CHECK(res.samples[0].deviation == 0.0);  // s = 0 is the baseline itself
  CHECK(res.worst_sigma_ratio <= 3.0);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvlab/coefficients.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/scenario.hpp"

using namespace mvlab;

namespace {

CoefficientSet constant_coeffs(double gamma, std::vector<double> progeny,
                               double b0 = 0.0, double sigma0 = 1.0) {
  Scenario s = make_constant_scenario();
  s.params = {{"b", b0}, {"sigma", sigma0}, {"gamma", gamma}};
  for (std::size_t l = 0; l < progeny.size(); ++l)
    if (progeny[l] != 0.0) s.params["p" + std::to_string(l)] = progeny[l];
  s.bounds.L_max = progeny.size() - 1;
  s.bounds.gamma_bar = std::max(gamma, 1.0);
  s.bounds.M = std::max({std::fabs(b0), sigma0, 2.0});
  return s.coefficients();
}

}  // namespace

TEST_CASE("net_growth_c closed forms") {
  const PointMeasure mu;
  const std::vector<double> x{0.0};
  // gamma=0.5, p0=1: c = 0.5 * (0 - 1)
  CHECK(net_growth_c(constant_coeffs(0.5, {1.0}), 0.0, x, mu) ==
        doctest::Approx(-0.5));
  // critical branching: p1=1 -> c = 0
  CHECK(net_growth_c(constant_coeffs(0.7, {0.0, 1.0}), 0.0, x, mu) ==
        doctest::Approx(0.0));
  // gamma=1, p2=1 -> c = 1
  CHECK(net_growth_c(constant_coeffs(1.0, {0.0, 0.0, 1.0}), 0.0, x, mu) ==
        doctest::Approx(1.0));
}

TEST_CASE("net_growth_c is bounded by gamma_bar (M + 1)") {
  RngStream rng(42, StreamTag::kTest, {1});
  const Scenario s = make_mean_field_scenario();
  const CoefficientSet cs = s.coefficients();
  for (int trial = 0; trial < 200; ++trial) {
    PointMeasure mu(1);
    for (int a = 0; a < 4; ++a) mu.push_atom({4 * rng.u01() - 2}, rng.u01());
    const std::vector<double> x{4 * rng.u01() - 2};
    const double c = net_growth_c(cs, rng.u01(), x, mu);
    CHECK(std::fabs(c) <= cs.bounds.gamma_bar * (cs.bounds.M + 1.0) + 1e-12);
  }
}

TEST_CASE("offspring partition round trip and sampling") {
  const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  const OffspringPartition part = OffspringPartition::from_probabilities(p);
  REQUIRE(part.cumulative.size() == p.size() + 1);
  CHECK(part.cumulative.front() == 0.0);
  CHECK(part.cumulative.back() == 1.0);
  for (std::size_t l = 0; l < p.size(); ++l)
    CHECK(part.interval_length(l) == doctest::Approx(p[l]).epsilon(1e-12));

  CHECK(sample_progeny(0.25, part) == 1);  // I_1 = [0.25, 0.5)
  const std::vector<double> sure{1.0};
  CHECK(sample_progeny(0.0, OffspringPartition::from_probabilities(sure)) == 0);
  const std::vector<double> split{0.5, 0.0, 0.5};
  const OffspringPartition half = OffspringPartition::from_probabilities(split);
  CHECK(sample_progeny(0.999, half) == 2);  // I_2 = [0.5, 1)
  CHECK_THROWS_AS(sample_progeny(1.0, part), DomainError);
  CHECK_THROWS_AS(sample_progeny(-0.1, part), DomainError);
}

TEST_CASE("empirical progeny frequencies match p within 4 binomial sigmas") {
  const std::vector<double> p{0.15, 0.35, 0.4, 0.1};
  const OffspringPartition part = OffspringPartition::from_probabilities(p);
  RngStream rng(10, StreamTag::kTest, {2});
  const std::size_t draws = 1'000'000;
  std::vector<std::size_t> hits(p.size(), 0);
  for (std::size_t i = 0; i < draws; ++i)
    ++hits[sample_progeny(rng.u01_halfopen(), part)];
  for (std::size_t l = 0; l < p.size(); ++l) {
    const double freq = static_cast<double>(hits[l]) / draws;
    const double sigma = std::sqrt(p[l] * (1 - p[l]) / draws);
    CHECK(std::fabs(freq - p[l]) <= 4.0 * sigma);
  }
}

TEST_CASE("partition round trip at random probabilities") {
  RngStream rng(11, StreamTag::kTest, {3});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(4);
    double sum = 0.0;
    for (auto& v : p) {
      v = rng.u01();
      sum += v;
    }
    for (auto& v : p) v /= sum;
    double s2 = 0.0;
    for (double v : p) s2 += v;
    p[0] += 1.0 - s2;
    const OffspringPartition part = OffspringPartition::from_probabilities(p);
    for (std::size_t l = 0; l < p.size(); ++l)
      CHECK(part.interval_length(l) == doctest::Approx(p[l]).epsilon(1e-12));
  }
}

TEST_CASE("validate_assumptions: constant coefficients pass with zero quotients") {
  const CoefficientSet cs = constant_coeffs(0.5, {1.0});
  ProbePlan plan;
  plan.points = 64;
  plan.pairs = 64;
  const ValidationReport rep = validate_assumptions(cs, plan);
  CHECK(rep.passed);
  CHECK(rep.lipschitz_quotient_b == 0.0);
  CHECK(rep.lipschitz_quotient_sigma == 0.0);
  CHECK(rep.lipschitz_quotient_c == 0.0);
  CHECK(rep.min_eigenvalue == doctest::Approx(1.0));
}

TEST_CASE("validate_assumptions flags a drift Lipschitz violation") {
  // b(x) = 2x with declared L = 1 must be flagged.
  CoefficientSet cs = constant_coeffs(0.0, {1.0});
  cs.bounds.L = 1.0;
  cs.bounds.M = 100.0;
  cs.drift = [](double, std::span<const double> x, Pairings,
                std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i];
  };
  ProbePlan plan;
  plan.points = 32;
  plan.pairs = 64;
  const ValidationReport rep = validate_assumptions(cs, plan);
  CHECK(!rep.passed);
  CHECK(rep.lipschitz_quotient_b > 1.0);
}

TEST_CASE("validate_assumptions: identity diffusion has unit floor") {
  const CoefficientSet cs = constant_coeffs(0.2, {0.0, 1.0});
  ProbePlan plan;
  plan.points = 16;
  plan.pairs = 8;
  const ValidationReport rep = validate_assumptions(cs, plan);
  CHECK(rep.min_eigenvalue == doctest::Approx(1.0));
  CHECK(rep.passed);
}

TEST_CASE("built-in scenarios satisfy their own declared bounds") {
  for (ScenarioFamily family :
       {ScenarioFamily::kConstant, ScenarioFamily::kPureDeath,
        ScenarioFamily::kBinaryBranching, ScenarioFamily::kMeanField}) {
    const Scenario s = make_scenario(family);
    ProbePlan plan;
    plan.points = 64;
    plan.pairs = 64;
    const ValidationReport rep = validate_assumptions(s.coefficients(), plan);
    INFO(family_name(family));
    for (const auto& v : rep.violations) INFO(v);
    CHECK(rep.passed);
  }
}

TEST_CASE("scenario config round-trips through parse -> emit") {
  for (ScenarioFamily family :
       {ScenarioFamily::kConstant, ScenarioFamily::kPureDeath,
        ScenarioFamily::kBinaryBranching, ScenarioFamily::kMeanField}) {
    const Scenario s = make_scenario(family);
    const std::string text = emit_scenario(s);
    const Scenario back = parse_scenario(text);
    CHECK(emit_scenario(back) == text);
  }
}

TEST_CASE("scenario parser rejects unknown keys") {
  CHECK_THROWS_AS(parse_scenario("{\"family\":\"constant\",\"bogus\":1}"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_scenario("{\"family\":\"constant\",\"params\":{\"zeta\":1.0}}"),
      ConfigError);
  CHECK_THROWS_AS(parse_scenario("{\"family\":\"nope\"}"), ConfigError);
  CHECK_THROWS_AS(
      parse_scenario("{\"family\":\"constant\",\"params\":{\"p0\":0.5}}"),
      ConfigError);
}

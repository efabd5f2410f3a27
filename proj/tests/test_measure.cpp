#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;

namespace {

PointMeasure make_measure(std::initializer_list<std::pair<std::vector<double>, double>> atoms) {
  PointMeasure mu;
  for (const auto& [x, w] : atoms) mu.push_atom(x, w);
  return mu;
}

Population random_population(RngStream& rng, std::size_t max_particles) {
  Population pop;
  const std::size_t n = 1 + static_cast<std::size_t>(rng.u01() * max_particles);
  for (std::size_t i = 0; i < n; ++i) {
    Particle p;
    // depth-1 or depth-2 labels; prefix pairs rejected below
    std::vector<std::uint32_t> path{static_cast<std::uint32_t>(1 + rng.u01() * 6)};
    if (rng.u01() < 0.5) path.push_back(static_cast<std::uint32_t>(1 + rng.u01() * 3));
    p.label = Label(path);
    p.position = {2.0 * rng.u01() - 1.0, 2.0 * rng.u01() - 1.0};
    bool clashes = false;
    for (const auto& q : pop.particles)
      if (q.label == p.label || q.label.is_ancestor_of(p.label) ||
          p.label.is_ancestor_of(q.label))
        clashes = true;
    if (!clashes) pop.particles.push_back(std::move(p));
  }
  return pop;
}

}  // namespace

TEST_CASE("labels: concatenation, ancestry, serialization") {
  const Label root;
  const Label k({1, 2});
  const Label kp({1, 2, 3});
  CHECK(root.concat(k) == k);
  CHECK(k.concat(root) == k);
  CHECK(k.concat(Label({3})) == kp);
  CHECK(k.is_ancestor_of(kp));
  CHECK(!kp.is_ancestor_of(k));
  CHECK(!k.is_ancestor_of(k));
  CHECK(root.is_ancestor_of(k));
  CHECK(k.to_string() == "1.2");
  CHECK(root.to_string() == "");
  CHECK(Label::from_string("1.2.3") == kp);
  CHECK(Label::from_string("") == root);
}

TEST_CASE("population antichain detection") {
  Population pop;
  pop.particles.push_back({Label({1}), {0.0}, 0.0});
  pop.particles.push_back({Label({2}), {0.0}, 0.0});
  CHECK(pop.is_antichain());
  pop.particles.push_back({Label({1, 1}), {0.0}, 0.0});
  CHECK(!pop.is_antichain());
}

TEST_CASE("pair: constants, empty measure, coordinate sums") {
  auto one = [](std::span<const double>) { return 1.0; };
  CHECK(pair(one, make_measure({{{0.5}, 2.0}})) == doctest::Approx(2.0));
  CHECK(pair(one, PointMeasure{}) == 0.0);
  auto x1 = [](std::span<const double> x) { return x[0]; };
  const auto mu = make_measure({{{1.0, 0.0}, 0.5}, {{3.0, 0.0}, 0.25}});
  CHECK(pair(x1, mu) == doctest::Approx(1.25));  // 0.5*1 + 0.25*3
}

TEST_CASE("pair rejects non-finite values with the atom identified") {
  const auto mu = make_measure({{{2.0}, 1.0}});
  auto bad = [](std::span<const double> x) { return std::log(-x[0]); };
  CHECK_THROWS_AS(pair(bad, mu), EvaluationError);
}

TEST_CASE("mass") {
  CHECK(mass(PointMeasure{}) == 0.0);
  CHECK(mass(make_measure({{{0.0}, 1.0}, {{0.0}, 1.0}})) == 2.0);
}

TEST_CASE("moment") {
  CHECK(moment(PointMeasure{}, 2.0) == 0.0);
  CHECK(moment(make_measure({{{2.0, 0.0}, 3.0}}), 2.0) == doctest::Approx(12.0));
  CHECK(moment(make_measure({{{1.0, 1.0}, 1.0}}), 1.0) ==
        doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS(moment(PointMeasure{}, 0.5), DomainError);
}

TEST_CASE("population_to_measure: scaling and masses") {
  CHECK(population_to_measure({}, 1.0).empty());

  Population pop;
  for (int i = 0; i < 3; ++i)
    pop.particles.push_back({Label({std::uint32_t(i + 1)}), {double(i)}, 0.0});
  std::vector<Population> single{pop};
  CHECK(mass(population_to_measure(single, 1.0 / 3.0)) == doctest::Approx(1.0));

  Population a, b;
  for (int i = 0; i < 2; ++i)
    a.particles.push_back({Label({std::uint32_t(i + 1)}), {double(i)}, 0.0});
  for (int i = 0; i < 4; ++i)
    b.particles.push_back({Label({std::uint32_t(i + 1)}), {double(i) + 0.5}, 0.0});
  std::vector<Population> two{a, b};
  CHECK(mass(population_to_measure(two, 0.5)) == doctest::Approx(3.0));
}

TEST_CASE("population_to_measure is permutation invariant bit-exactly") {
  RngStream rng(7, StreamTag::kTest, {1});
  Population a = random_population(rng, 6);
  Population b = random_population(rng, 6);
  std::vector<Population> fwd{a, b};
  std::vector<Population> rev{b, a};
  std::reverse(rev[0].particles.begin(), rev[0].particles.end());
  const PointMeasure m1 = population_to_measure(fwd, 0.5);
  const PointMeasure m2 = population_to_measure(rev, 0.5);
  REQUIRE(m1.size() == m2.size());
  auto f = [](std::span<const double> x) { return std::sin(x[0]) + x[1]; };
  CHECK(pair(f, m1) == pair(f, m2));  // bit-identical after canonical sort
}

TEST_CASE("population_distance examples") {
  Population e1, e2;
  e1.particles.push_back({Label({1}), {0.0}, 0.0});
  e2.particles.push_back({Label({1}), {5.0}, 0.0});
  CHECK(population_distance(e1, e1) == 0.0);
  CHECK(population_distance(e1, e2) == doctest::Approx(1.0));  // |5| ^ 1

  Population a, b;
  a.particles.push_back({Label({1}), {0.0}, 0.0});
  a.particles.push_back({Label({2}), {0.0}, 0.0});
  b.particles.push_back({Label({3}), {0.0}, 0.0});
  b.particles.push_back({Label({4}), {0.0}, 0.0});
  b.particles.push_back({Label({5}), {0.0}, 0.0});
  CHECK(population_distance(a, b) == doctest::Approx(5.0));
}

TEST_CASE("d_E axioms on random pairs and triples") {
  RngStream rng(11, StreamTag::kTest, {2});
  for (int trial = 0; trial < 200; ++trial) {
    Population a = random_population(rng, 5);
    Population b = random_population(rng, 5);
    Population c = random_population(rng, 5);
    const double ab = population_distance(a, b);
    const double ba = population_distance(b, a);
    CHECK(ab == ba);  // symmetric exactly
    CHECK(population_distance(a, a) == 0.0);
    const double ac = population_distance(a, c);
    const double cb = population_distance(c, b);
    CHECK(ab <= ac + cb + 1e-12);
  }
}

TEST_CASE("add_atom: positive, cancelling, and pairing shifts") {
  const PointMeasure empty;
  const std::vector<double> origin{0.0};
  CHECK(mass(add_atom(empty, origin, 1.0)) == doctest::Approx(1.0));

  const auto mu = make_measure({{{0.0}, 1.0}});
  CHECK(mass(add_atom(mu, origin, -1.0)) == doctest::Approx(0.0));

  const std::vector<double> two{2.0};
  const auto nu = add_atom(mu, two, 0.5);
  auto x = [](std::span<const double> p) { return p[0]; };
  CHECK(pair(x, nu) == doctest::Approx(1.0));  // 0*1 + 2*0.5

  CHECK_THROWS_AS(add_atom(mu, two, -0.5), InvalidPerturbationError);
  CHECK_THROWS_AS(add_atom(mu, origin, -2.0), InvalidPerturbationError);
}

TEST_CASE("add_atom then negated add_atom restores pairings") {
  RngStream rng(3, StreamTag::kTest, {3});
  for (int trial = 0; trial < 50; ++trial) {
    PointMeasure mu;
    const std::size_t atoms = 1 + static_cast<std::size_t>(rng.u01() * 4);
    for (std::size_t i = 0; i < atoms; ++i)
      mu.push_atom({rng.u01(), rng.u01()}, rng.u01() + 0.1);
    const std::vector<double> x{rng.u01(), rng.u01()};
    const double w = rng.u01();
    const PointMeasure back = add_atom(add_atom(mu, x, w), x, -w);
    auto f = [](std::span<const double> p) { return std::cos(p[0]) * p[1]; };
    CHECK(pair(f, back) == doctest::Approx(pair(f, mu)).epsilon(1e-12));
  }
}

TEST_CASE("pairing linearity to 1e-12 relative") {
  RngStream rng(5, StreamTag::kTest, {4});
  for (int trial = 0; trial < 100; ++trial) {
    PointMeasure mu;
    for (int i = 0; i < 6; ++i) mu.push_atom({rng.u01() * 4 - 2}, rng.u01());
    const double a = 4.0 * rng.u01() - 2.0;
    auto f = [](std::span<const double> x) { return std::sin(3 * x[0]); };
    auto g = [](std::span<const double> x) { return x[0] * x[0]; };
    auto combo = [&](std::span<const double> x) { return a * f(x) + g(x); };
    const double lhs = pair(combo, mu);
    const double rhs = a * pair(f, mu) + pair(g, mu);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("measure CSV round trip") {
  const auto mu = make_measure({{{0.125, -3.5}, 1.0}, {{2.0, 0.1}, 0.0625}});
  std::stringstream ss;
  write_measure_csv(ss, mu);
  const std::string text = ss.str();
  CHECK(text.substr(0, text.find('\n')) == "x1,x2,weight");
  std::stringstream in(text);
  const PointMeasure back = read_measure_csv(in);
  REQUIRE(back.size() == mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    CHECK(back.atoms()[i].location == mu.atoms()[i].location);
    CHECK(back.atoms()[i].weight == mu.atoms()[i].weight);
  }
}

TEST_CASE("measure CSV skips comment lines") {
  std::stringstream in("# meta comment\nx1,weight\n1.5,2\n");
  const PointMeasure mu = read_measure_csv(in);
  REQUIRE(mu.size() == 1);
  CHECK(mu.atoms()[0].location[0] == 1.5);
  CHECK(mu.atoms()[0].weight == 2.0);
}

TEST_CASE("zero-weight atoms are removable without changing pairings") {
  auto mu = make_measure({{{1.0}, 0.5}, {{2.0}, 0.0}, {{1.0}, 0.25}});
  const PointMeasure agg = mu.aggregated();
  CHECK(agg.size() == 1);
  auto f = [](std::span<const double> x) { return std::exp(x[0]); };
  CHECK(pair(f, agg) == doctest::Approx(pair(f, mu)).epsilon(1e-12));
}

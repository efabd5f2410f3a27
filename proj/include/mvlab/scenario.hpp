#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvlab/coefficients.hpp"
#include "mvlab/measure.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

// Initial condition: a fixed number of particles per population, positions
// i.i.d. from a point mass or an isotropic Gaussian. Initial labels are
// 1..count (an antichain), birth time 0.
struct InitialCondition {
  enum class Kind { kPoint, kGaussian };
  Kind kind = Kind::kGaussian;
  std::size_t count = 4;
  std::vector<double> mean;  // length d
  double stddev = 1.0;       // Gaussian only

  Population sample_population(RngStream& rng) const;
  // One draw of the lifted initial condition (Y_0, Z_0): the position law of
  // a single particle, weight = total initial mass.
  void sample_lifted(RngStream& rng, std::span<double> y_out) const;
  double initial_mass() const { return static_cast<double>(count); }
};

// The scenario families shipped with the lab. The literature this follows
// never fixes a concrete coefficient family, so these are our constructions;
// each one has a closed-form or brute-force oracle used by the test suite.
enum class ScenarioFamily { kConstant, kPureDeath, kBinaryBranching, kMeanField };

std::string family_name(ScenarioFamily f);
ScenarioFamily family_from_name(const std::string& name);

struct Scenario {
  ScenarioFamily family = ScenarioFamily::kConstant;
  std::size_t dim = 1;
  // Numeric parameters; the valid keys depend on the family (see
  // scenario.cpp). Unknown keys are rejected at parse time.
  std::map<std::string, double> params;
  CoefficientBounds bounds;
  InitialCondition init;

  CoefficientSet coefficients() const;
};

// Built-in presets (defaults documented in README).
Scenario make_constant_scenario();
Scenario make_pure_death_scenario();
Scenario make_binary_branching_scenario();
Scenario make_mean_field_scenario();
Scenario make_scenario(ScenarioFamily family);

// Declarative scenario block <-> JSON round-trip (bit-exact through
// parse -> emit; numbers are preserved exactly). `text` holds a JSON object.
Scenario parse_scenario(const std::string& text);
std::string emit_scenario(const Scenario& s);

}  // namespace mvlab

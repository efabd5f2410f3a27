#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlab/grid.hpp"
#include "mvlab/scenario.hpp"

namespace mvlab {

// Declarative run configuration: one JSON file drives every subcommand.
// Unknown keys are rejected; canonical emission (sorted keys, exact numeric
// round-trip) makes configs diffable and hashable for provenance.
struct RunConfig {
  Scenario scenario = make_constant_scenario();
  SimGrid grid = SimGrid(1.0, 1.0 / 64.0);
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  struct Simulate {
    std::size_t populations = 64;
    std::size_t runs = 1;
    std::size_t particle_cap = 1'000'000;
  } simulate;

  struct Reference {
    std::size_t ensemble = 4096;
    std::string method = "self-interaction";  // or "picard"
    std::size_t picard_iterations = 4;
    double gap_coarsen_radius = 0.0;
  } reference;

  struct Distance {
    std::string mu_csv;
    std::string nu_csv;
    std::string metric = "bounded-lipschitz";  // or "extended-w1"
    double coarsen_radius = 0.0;
    bool witness = false;
  } distance;

  struct Convergence {
    std::vector<std::size_t> n_list = {8, 16, 32, 64, 128, 256};
    double replica_factor = 4.0;
    std::size_t replica_cap = 100'000;
    std::size_t reference_ensemble = 4096;
    std::size_t reference_batches = 8;
    std::string g = "tanh-pairing-squared";
  } convergence;

  struct Check {
    std::vector<std::string> scenarios = {"constant", "pure-death",
                                          "binary-branching", "mean-field"};
    std::size_t ensemble_runs = 64;
    std::size_t populations = 64;
    std::size_t ito_replicas = 200;
    std::size_t lifted_ensemble = 2048;
    std::size_t sandwich_pairs = 200;
  } check;

  struct Value {
    std::vector<double> times = {0.0};
    std::string measure_csv;  // empty: use the sampled initial projection
    std::string g = "mass";
    std::size_t ensemble = 1024;
    std::size_t restarts = 8;
  } value;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string canonical_emit(const RunConfig& config);

// FNV-1a over the canonical emission with the output path normalized away,
// as a 16-digit hex string: the hash identifies what a run computes, not
// where its artifacts land. Worker counts never appear in a config at all;
// they change wall time only.
std::string config_hash(const RunConfig& config);

bool config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace mvlab

#pragma once

#include <cmath>
#include <cstddef>

#include "mvlab/errors.hpp"

namespace mvlab {

// Uniform time grid t_j = j * dt on [0, T]; dt must divide T.
struct SimGrid {
  double horizon = 1.0;
  double dt = 1.0 / 64.0;
  std::size_t steps = 64;

  SimGrid() = default;
  SimGrid(double T, double dt_) : horizon(T), dt(dt_) {
    if (!(T > 0.0) || !(dt_ > 0.0))
      throw DomainError("SimGrid: horizon and dt must be positive");
    const double n = T / dt_;
    steps = static_cast<std::size_t>(std::llround(n));
    if (steps == 0 || std::fabs(static_cast<double>(steps) * dt_ - T) > 1e-12 * std::max(1.0, T))
      throw DomainError("SimGrid: dt must divide the horizon");
  }

  double time(std::size_t j) const { return static_cast<double>(j) * dt; }
  std::size_t points() const { return steps + 1; }

  // Sub-grid starting at t_j with the same dt.
  SimGrid tail_from(std::size_t j) const {
    SimGrid g;
    g.dt = dt;
    g.steps = steps - j;
    g.horizon = static_cast<double>(g.steps) * dt;
    return g;
  }

  friend bool operator==(const SimGrid&, const SimGrid&) = default;
};

}  // namespace mvlab

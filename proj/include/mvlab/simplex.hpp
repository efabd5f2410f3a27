#pragma once

#include <cstdint>
#include <vector>

namespace mvlab {

// Dense revised simplex for  min c.x  s.t.  A x = b, x >= 0,  with sparse
// columns and an explicit basis inverse. Feasibility is restored by a
// phase-1 pass over artificial variables; phase 2 prices with a partial
// Dantzig scan and falls back to Bland's rule permanently once the objective
// stalls, which guarantees termination on degenerate problems (transport
// instances are heavily degenerate).
//
// Scale: designed for a few thousand rows and up to a few million structured
// columns (pricing touches each column's sparse entries only).

struct SimplexProblem {
  struct Col {
    double cost = 0.0;
    // (row, value) pairs, rows in increasing order.
    std::vector<std::pair<std::uint32_t, double>> entries;
  };

  std::size_t rows = 0;
  std::vector<double> rhs;  // length rows
  std::vector<Col> cols;

  std::size_t add_col(double cost,
                      std::initializer_list<std::pair<std::uint32_t, double>> e) {
    Col c;
    c.cost = cost;
    c.entries.assign(e.begin(), e.end());
    cols.push_back(std::move(c));
    return cols.size() - 1;
  }
};

enum class SimplexStatus { kOptimal, kInfeasible, kUnbounded, kIterLimit };

struct SimplexResult {
  SimplexStatus status = SimplexStatus::kIterLimit;
  double objective = 0.0;
  std::vector<double> x;      // primal values per column
  std::vector<double> duals;  // y per row (w.r.t. the original row signs)
  std::size_t iterations = 0;
};

struct SimplexOptions {
  double tol = 1e-9;
  std::size_t max_iterations = 2'000'000;
  std::size_t stall_limit = 64;  // non-improving pivots before a Bland spell
  // Relative rhs perturbation breaking ties on degenerate instances (equal
  // atom weights make transport bases massively degenerate). The objective
  // error is bounded by rows * perturbation * max|rhs|.
  double degeneracy_perturbation = 1e-11;
};

SimplexResult solve_simplex(const SimplexProblem& prob,
                            const SimplexOptions& opts = {});

}  // namespace mvlab

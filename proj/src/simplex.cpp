#include "mvlab/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvlab {

namespace {

struct Engine {
  const SimplexProblem& prob;
  const SimplexOptions& opts;
  std::size_t m;
  std::size_t n;

  std::vector<double> row_sign;  // applied to make rhs nonnegative
  std::vector<double> b;         // sign-adjusted rhs

  // Basis: column index < n is structural, >= n is the artificial of row
  // (index - n). Artificial columns are +e_row with the adjusted signs.
  std::vector<std::size_t> basis;
  std::vector<std::int32_t> pos_in_basis;  // structural col -> basis slot or -1
  std::vector<double> binv;                // m x m row-major
  std::vector<double> xb;                  // basic values
  std::vector<double> y;                   // duals of the current phase
  std::vector<double> work;                // Binv * entering column

  std::size_t iterations = 0;
  std::size_t bland_countdown = 0;  // > 0: Bland pricing to escape a stall
  std::size_t stall = 0;
  std::size_t cursor = 0;  // partial-pricing cursor

  Engine(const SimplexProblem& p, const SimplexOptions& o)
      : prob(p), opts(o), m(p.rows), n(p.cols.size()) {
    row_sign.assign(m, 1.0);
    b.assign(m, 0.0);
    double scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) scale = std::max(scale, std::fabs(prob.rhs[i]));
    if (scale == 0.0) scale = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      row_sign[i] = prob.rhs[i] < 0.0 ? -1.0 : 1.0;
      b[i] = prob.rhs[i] * row_sign[i];
      // Index-weighted tie breaking; keeps ratio tests off degenerate plateaus.
      b[i] += opts.degeneracy_perturbation * scale *
              (static_cast<double>(i % 97) + 1.0);
    }
    basis.resize(m);
    pos_in_basis.assign(n, -1);
    binv.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      basis[i] = n + i;
      binv[i * m + i] = 1.0;
    }
    xb = b;
    y.assign(m, 0.0);
    work.assign(m, 0.0);
  }

  double col_cost(std::size_t j, bool phase1) const {
    if (phase1) return j >= n ? 1.0 : 0.0;
    return j >= n ? 0.0 : prob.cols[j].cost;
  }

  // work = Binv * (sign-adjusted column j)
  void ftran(std::size_t j) {
    std::fill(work.begin(), work.end(), 0.0);
    if (j >= n) {
      const std::size_t r = j - n;
      for (std::size_t i = 0; i < m; ++i) work[i] = binv[i * m + r];
      return;
    }
    for (const auto& [row, val] : prob.cols[j].entries) {
      const double v = val * row_sign[row];
      if (v == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i) work[i] += binv[i * m + row] * v;
    }
  }

  void compute_duals(bool phase1) {
    // y = cB^T Binv  (in the sign-adjusted frame)
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double cb = col_cost(basis[i], phase1);
      if (cb == 0.0) continue;
      const double* row = &binv[i * m];
      for (std::size_t k = 0; k < m; ++k) y[k] += cb * row[k];
    }
  }

  double reduced_cost(std::size_t j, bool phase1) const {
    double d = col_cost(j, phase1);
    for (const auto& [row, val] : prob.cols[j].entries)
      d -= y[row] * val * row_sign[row];
    return d;
  }

  // Returns the entering column or SIZE_MAX at optimality.
  std::size_t price(bool phase1) {
    if (bland_countdown > 0) {
      for (std::size_t j = 0; j < n; ++j) {
        if (pos_in_basis[j] >= 0) continue;
        if (reduced_cost(j, phase1) < -opts.tol) return j;
      }
      return SIZE_MAX;
    }
    // Partial Dantzig: scan blocks from the cursor, keep the best negative.
    const std::size_t block = std::max<std::size_t>(2048, n / 16);
    std::size_t scanned = 0;
    while (scanned < n) {
      std::size_t best = SIZE_MAX;
      double best_d = -opts.tol;
      const std::size_t stop = std::min(n - scanned, block);
      for (std::size_t k = 0; k < stop; ++k) {
        const std::size_t j = (cursor + k) % n;
        if (pos_in_basis[j] >= 0) continue;
        const double d = reduced_cost(j, phase1);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      scanned += stop;
      cursor = (cursor + stop) % n;
      if (best != SIZE_MAX) return best;
    }
    return SIZE_MAX;
  }

  // Bland-compatible ratio test; returns leaving slot or SIZE_MAX (unbounded).
  // The tie window is far below the rhs perturbation so perturbed ratios
  // break ties on their own.
  std::size_t ratio_test() const {
    const double tie = opts.tol * 1e-5;
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = SIZE_MAX;
    for (std::size_t i = 0; i < m; ++i) {
      if (work[i] <= opts.tol) continue;
      const double r = xb[i] / work[i];
      if (r < theta - tie ||
          (r < theta + tie && (leave == SIZE_MAX || basis[i] < basis[leave]))) {
        theta = r;
        leave = i;
      }
    }
    return leave;
  }

  void pivot(std::size_t entering, std::size_t leave) {
    const double piv = work[leave];
    double* lrow = &binv[leave * m];
    for (std::size_t k = 0; k < m; ++k) lrow[k] /= piv;
    xb[leave] /= piv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == leave) continue;
      const double f = work[i];
      if (f == 0.0) continue;
      double* irow = &binv[i * m];
      for (std::size_t k = 0; k < m; ++k) irow[k] -= f * lrow[k];
      xb[i] -= f * xb[leave];
      if (xb[i] < 0.0 && xb[i] > -opts.tol) xb[i] = 0.0;
    }
    const std::size_t old = basis[leave];
    if (old < n) pos_in_basis[old] = -1;
    basis[leave] = entering;
    if (entering < n) pos_in_basis[entering] = static_cast<std::int32_t>(leave);
  }

  double objective(bool phase1) const {
    double obj = 0.0;
    for (std::size_t i = 0; i < m; ++i) obj += col_cost(basis[i], phase1) * xb[i];
    return obj;
  }

  SimplexStatus iterate(bool phase1) {
    double last_obj = objective(phase1);
    while (iterations < opts.max_iterations) {
      compute_duals(phase1);
      const std::size_t entering = price(phase1);
      if (entering == SIZE_MAX) return SimplexStatus::kOptimal;
      ftran(entering);
      const std::size_t leave = ratio_test();
      if (leave == SIZE_MAX) return SimplexStatus::kUnbounded;
      pivot(entering, leave);
      ++iterations;
      if (bland_countdown > 0) --bland_countdown;
      const double obj = objective(phase1);
      if (obj < last_obj - 1e-14 * (1.0 + std::fabs(last_obj))) {
        stall = 0;
        last_obj = obj;
      } else if (++stall >= opts.stall_limit) {
        // Escape the degenerate vertex with Bland pricing, then resume
        // Dantzig pricing.
        bland_countdown = std::max<std::size_t>(2 * m, 64);
        stall = 0;
      }
    }
    return SimplexStatus::kIterLimit;
  }

  SimplexResult run() {
    SimplexResult out;
    // Phase 1: minimize the sum of artificials.
    SimplexStatus st = iterate(/*phase1=*/true);
    if (st != SimplexStatus::kOptimal) {
      out.status = st;
      out.iterations = iterations;
      return out;
    }
    if (objective(true) > opts.tol * (1.0 + m)) {
      out.status = SimplexStatus::kInfeasible;
      out.iterations = iterations;
      return out;
    }
    // Drive basic artificials (level ~0) out where a structural pivot exists;
    // rows that admit none are redundant and keep a zero artificial.
    for (std::size_t i = 0; i < m; ++i) {
      if (basis[i] < n) continue;
      for (std::size_t j = 0; j < n && basis[i] >= n; ++j) {
        if (pos_in_basis[j] >= 0) continue;
        ftran(j);
        if (std::fabs(work[i]) > 1e-7) pivot(j, i);
      }
    }
    bland_countdown = 0;
    stall = 0;
    st = iterate(/*phase1=*/false);
    out.status = st;
    out.iterations = iterations;
    if (st != SimplexStatus::kOptimal) return out;

    out.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      if (basis[i] < n) out.x[basis[i]] = xb[i];
    compute_duals(false);
    out.duals.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) out.duals[k] = y[k] * row_sign[k];
    out.objective = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (out.x[j] != 0.0) out.objective += prob.cols[j].cost * out.x[j];
    return out;
  }
};

}  // namespace

SimplexResult solve_simplex(const SimplexProblem& prob, const SimplexOptions& opts) {
  Engine eng(prob, opts);
  return eng.run();
}

}  // namespace mvlab

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace mvlab {

// Pairwise (cascade) summation over a fixed-order range. Used wherever a
// reduction must be deterministic across worker counts: results depend only
// on the element order, never on scheduling.
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

inline double sq_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

inline double euclid_norm(std::span<const double> x) { return std::sqrt(sq_norm(x)); }

inline double euclid_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct MeanStderr {
  double mean = 0.0;
  double stddev = 0.0;   // sample standard deviation
  double stderr_ = 0.0;  // stddev / sqrt(n)
  std::size_t n = 0;
};

inline MeanStderr mean_stderr(std::span<const double> v) {
  MeanStderr out;
  out.n = v.size();
  if (out.n == 0) return out;
  out.mean = pairwise_sum(v) / static_cast<double>(out.n);
  if (out.n < 2) return out;
  std::vector<double> dev(out.n);
  for (std::size_t i = 0; i < out.n; ++i) {
    const double d = v[i] - out.mean;
    dev[i] = d * d;
  }
  const double ss = pairwise_sum(dev);
  out.stddev = std::sqrt(ss / static_cast<double>(out.n - 1));
  out.stderr_ = out.stddev / std::sqrt(static_cast<double>(out.n));
  return out;
}

// Smallest eigenvalue of a symmetric d x d matrix (row-major), via cyclic
// Jacobi rotations. Sizes here are tiny (spatial dimension), so simplicity
// beats a LAPACK dependency.
inline double min_eigenvalue_sym(std::vector<double> a, std::size_t d) {
  if (d == 0) return 0.0;
  if (d == 1) return a[0];
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * d + j]; };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-28) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  double lo = at(0, 0);
  for (std::size_t i = 1; i < d; ++i) lo = std::min(lo, at(i, i));
  return lo;
}

// Two-sided 97.5% Student-t quantiles for small dof; saturates at the normal
// value. Used for slope confidence intervals.
inline double t_quantile_975(std::size_t dof) {
  static const double table[] = {
      12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060,
      2.2622,  2.2281, 2.2010, 2.1788, 2.1604, 2.1448, 2.1314, 2.1199,
      2.1098,  2.1009, 2.0930, 2.0860, 2.0796, 2.0739, 2.0687, 2.0639,
      2.0595,  2.0555, 2.0518, 2.0484, 2.0452, 2.0423};
  if (dof == 0) return 12.7062;
  if (dof <= 30) return table[dof - 1];
  return 1.9600;
}

}  // namespace mvlab

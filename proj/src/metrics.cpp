#include "mvlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mvlab/errors.hpp"
#include "mvlab/numeric.hpp"
#include "mvlab/simplex.hpp"

namespace mvlab {

namespace {

// Union support with signed weights mu - nu; exact-duplicate locations are
// merged and points with zero net weight dropped (any admissible f extends
// across a dropped point by the McShane truncated extension, so the optimum
// is unchanged).
struct SignedSupport {
  std::vector<std::vector<double>> points;
  std::vector<double> s;
};

SignedSupport signed_support(const PointMeasure& mu, const PointMeasure& nu) {
  std::map<std::vector<double>, double> acc;
  for (const auto& a : mu.atoms()) acc[a.location] += a.weight;
  for (const auto& a : nu.atoms()) acc[a.location] -= a.weight;
  SignedSupport out;
  for (auto& [loc, w] : acc) {
    if (w == 0.0) continue;
    out.points.push_back(loc);
    out.s.push_back(w);
  }
  return out;
}

double capped_dist(const std::vector<double>& a, const std::vector<double>& b,
                   double cap) {
  return std::min(euclid_dist(a, b), cap);
}

}  // namespace

BlWitness bounded_lipschitz_witness(const PointMeasure& mu, const PointMeasure& nu) {
  if (!mu.empty() && !nu.empty() && mu.dim() != nu.dim())
    throw ShapeError("bounded_lipschitz: measures have different dimensions");
  SignedSupport sup = signed_support(mu, nu);
  const std::size_t n = sup.points.size();
  BlWitness out;
  out.points = sup.points;
  out.signed_weight = sup.s;
  out.f.assign(n, 0.0);
  if (n == 0) return out;
  if (n > kMaxDistanceSupport)
    throw SizeError("bounded_lipschitz: union support exceeds the hard cap; "
                    "coarsen the measures first");

  // Transshipment form: node balance  out - in + destroyed - created = s_i,
  // transport cost |x_i - x_j| ^ 2 (a move longer than 2 never beats
  // destroy+create), unit cost at the box. Duals y_i are the maximizing f.
  SimplexProblem lp;
  lp.rows = n;
  lp.rhs = sup.s;
  lp.cols.reserve(n * n + n);
  for (std::uint32_t i = 0; i < n; ++i) {
    lp.add_col(1.0, {{i, 1.0}});   // destroyed at i  (dual: f_i <= 1)
    lp.add_col(1.0, {{i, -1.0}});  // created at i    (dual: f_i >= -1)
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double c = capped_dist(sup.points[i], sup.points[j], 2.0);
      auto& col = lp.cols.emplace_back();
      col.cost = c;
      if (i < j)
        col.entries = {{i, 1.0}, {j, -1.0}};
      else
        col.entries = {{j, -1.0}, {i, 1.0}};
    }
  }
  const SimplexResult res = solve_simplex(lp);
  if (res.status != SimplexStatus::kOptimal)
    throw NumericsError("bounded_lipschitz: LP did not reach optimality");
  out.value = std::max(res.objective, 0.0);
  out.f = res.duals;
  // Snap duals into the box; phase boundaries can leave 1e-12 overshoot.
  for (double& v : out.f) v = std::clamp(v, -1.0, 1.0);
  return out;
}

double bounded_lipschitz(const PointMeasure& mu, const PointMeasure& nu) {
  return bounded_lipschitz_witness(mu, nu).value;
}

double extended_w1(const PointMeasure& mu, const PointMeasure& nu) {
  if (!mu.empty() && !nu.empty() && mu.dim() != nu.dim())
    throw ShapeError("extended_w1: measures have different dimensions");
  const PointMeasure ma = mu.aggregated();
  const PointMeasure na = nu.aggregated();
  const double mass_mu = mass(ma);
  const double mass_nu = mass(na);
  const double m = std::max(mass_mu, mass_nu);
  if (m <= 0.0) return 0.0;
  if (ma.size() + na.size() + 2 > kMaxDistanceSupport)
    throw SizeError("extended_w1: support exceeds the hard cap");

  // Sources: mu atoms plus a cemetery source of (m - mass mu); sinks
  // likewise. Balanced transport; the last sink row is redundant.
  struct Node {
    const std::vector<double>* x;  // nullptr = cemetery
    double w;
  };
  std::vector<Node> src, dst;
  for (const auto& a : ma.atoms()) src.push_back({&a.location, a.weight});
  if (m - mass_mu > 0.0) src.push_back({nullptr, m - mass_mu});
  for (const auto& a : na.atoms()) dst.push_back({&a.location, a.weight});
  if (m - mass_nu > 0.0) dst.push_back({nullptr, m - mass_nu});

  const std::size_t ns = src.size(), nd = dst.size();
  SimplexProblem lp;
  lp.rows = ns + nd - 1;  // drop the final sink constraint
  lp.rhs.resize(lp.rows);
  for (std::size_t i = 0; i < ns; ++i) lp.rhs[i] = src[i].w;
  for (std::size_t j = 0; j + 1 < nd; ++j) lp.rhs[ns + j] = dst[j].w;
  lp.cols.reserve(ns * nd);
  for (std::uint32_t i = 0; i < ns; ++i) {
    for (std::uint32_t j = 0; j < nd; ++j) {
      double c;
      if (src[i].x && dst[j].x)
        c = capped_dist(*src[i].x, *dst[j].x, 1.0);
      else if (!src[i].x && !dst[j].x)
        c = 0.0;
      else
        c = 1.0;  // unit creation/destruction at the cemetery
      auto& col = lp.cols.emplace_back();
      col.cost = c;
      if (j + 1 < nd)
        col.entries = {{i, 1.0}, {static_cast<std::uint32_t>(ns + j), 1.0}};
      else
        col.entries = {{i, 1.0}};
    }
  }
  const SimplexResult res = solve_simplex(lp);
  if (res.status != SimplexStatus::kOptimal)
    throw NumericsError("extended_w1: LP did not reach optimality");
  return std::max(res.objective, 0.0);
}

namespace {

// Brute-force state: assign grid values atom by atom, keeping per-atom
// feasible intervals implied by already-assigned values, with an admissible
// bound for pruning.
struct BruteForce {
  std::size_t n;
  double h;
  std::vector<std::vector<double>> pts;
  std::vector<double> s;
  std::vector<std::vector<double>> dist;  // pairwise Euclidean
  std::vector<double> assigned;
  double best = -1.0;

  double run() {
    best = 0.0;  // f == 0 is always feasible
    assigned.assign(n, 0.0);
    descend(0, 0.0);
    return best;
  }

  void descend(std::size_t level, double partial) {
    if (level == n) {
      best = std::max(best, partial);
      return;
    }
    // Feasible interval for this atom given the assigned prefix.
    double lo = -1.0, hi = 1.0;
    for (std::size_t j = 0; j < level; ++j) {
      lo = std::max(lo, assigned[j] - dist[level][j]);
      hi = std::min(hi, assigned[j] + dist[level][j]);
    }
    if (lo > hi + 1e-15) return;
    // Admissible bound: remaining atoms at their own best feasible ends.
    double bound = partial;
    for (std::size_t k = level; k < n; ++k) {
      double klo = -1.0, khi = 1.0;
      for (std::size_t j = 0; j < level; ++j) {
        klo = std::max(klo, assigned[j] - dist[k][j]);
        khi = std::min(khi, assigned[j] + dist[k][j]);
      }
      bound += s[k] >= 0.0 ? s[k] * khi : s[k] * klo;
    }
    if (bound <= best + 1e-15) return;

    long ilo = static_cast<long>(std::ceil((lo + 1.0) / h - 1e-9));
    long ihi = static_cast<long>(std::floor((hi + 1.0) / h + 1e-9));
    ilo = std::max(ilo, 0L);
    ihi = std::min(ihi, static_cast<long>(std::llround(2.0 / h)));
    if (ilo > ihi) return;
    // Enumerate from the objective-improving end first.
    const bool down = s[level] >= 0.0;
    for (long k = 0; k <= ihi - ilo; ++k) {
      const long idx = down ? ihi - k : ilo + k;
      assigned[level] = -1.0 + static_cast<double>(idx) * h;
      descend(level + 1, partial + s[level] * assigned[level]);
    }
  }
};

}  // namespace

double brute_force_bl(const PointMeasure& mu, const PointMeasure& nu,
                      double resolution) {
  if (!(resolution > 0.0) || resolution > 2.0)
    throw DomainError("brute_force_bl: resolution must be in (0, 2]");
  // Own minimal preprocessing, independent of the LP path.
  std::map<std::vector<double>, double> acc;
  for (const auto& a : mu.atoms()) acc[a.location] += a.weight;
  for (const auto& a : nu.atoms()) acc[a.location] -= a.weight;
  BruteForce bf;
  for (auto& [loc, w] : acc) {
    if (w == 0.0) continue;
    bf.pts.push_back(loc);
    bf.s.push_back(w);
  }
  bf.n = bf.pts.size();
  if (bf.n == 0) return 0.0;
  if (bf.n > 5) throw SizeError("brute_force_bl: more than 5 atoms");
  bf.h = resolution;
  //Largest |s| first: prunes earlier.
  std::vector<std::size_t> order(bf.n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(bf.s[a]) > std::fabs(bf.s[b]);
  });
  std::vector<std::vector<double>> pts(bf.n);
  std::vector<double> s(bf.n);
  for (std::size_t i = 0; i < bf.n; ++i) {
    pts[i] = bf.pts[order[i]];
    s[i] = bf.s[order[i]];
  }
  bf.pts = std::move(pts);
  bf.s = std::move(s);
  bf.dist.assign(bf.n, std::vector<double>(bf.n, 0.0));
  for (std::size_t i = 0; i < bf.n; ++i)
    for (std::size_t j = 0; j < bf.n; ++j)
      bf.dist[i][j] = euclid_dist(bf.pts[i], bf.pts[j]);
  return bf.run();
}

CoarsenResult coarsen(const PointMeasure& mu, double radius) {
  if (!(radius >= 0.0)) throw DomainError("coarsen: radius must be >= 0");
  CoarsenResult out;
  out.measure = PointMeasure(mu.dim());
  if (radius == 0.0 || mu.empty()) {
    out.measure = mu;
    return out;
  }
  // Deterministic greedy clustering over the canonically sorted atom list.
  std::vector<const PointMeasure::Atom*> atoms;
  atoms.reserve(mu.size());
  for (const auto& a : mu.atoms()) atoms.push_back(&a);
  std::sort(atoms.begin(), atoms.end(),
            [](const PointMeasure::Atom* a, const PointMeasure::Atom* b) {
              return a->location < b->location;
            });
  std::vector<std::vector<double>> centers;
  std::vector<double> weights;
  for (const auto* a : atoms) {
    bool placed = false;
    for (std::size_t c = 0; c < centers.size() && !placed; ++c) {
      if (euclid_dist(centers[c], a->location) <= radius) {
        weights[c] += a->weight;
        placed = true;
      }
    }
    if (!placed) {
      centers.push_back(a->location);
      weights.push_back(a->weight);
    }
  }
  for (std::size_t c = 0; c < centers.size(); ++c)
    out.measure.push_atom(centers[c], weights[c]);
  out.error_bound = radius * mass(mu);
  return out;
}

CoarsenResult lattice_coarsen(const PointMeasure& mu, double step) {
  if (!(step > 0.0)) throw DomainError("lattice_coarsen: step must be positive");
  std::map<std::vector<double>, double> acc;
  std::vector<double> snapped(mu.dim());
  for (const auto& a : mu.atoms()) {
    for (std::size_t k = 0; k < mu.dim(); ++k)
      snapped[k] = std::round(a.location[k] / step) * step;
    acc[snapped] += a.weight;
  }
  CoarsenResult out;
  out.measure = PointMeasure(mu.dim());
  out.measure.reserve(acc.size());
  for (const auto& [loc, w] : acc) out.measure.push_atom(loc, w);
  out.error_bound =
      0.5 * step * std::sqrt(static_cast<double>(mu.dim())) * mass(mu);
  return out;
}

CoarsenResult coarsen_to_support(const PointMeasure& mu, std::size_t target) {
  CoarsenResult out;
  if (target == 0 || mu.size() <= target) {
    out.measure = mu;
    return out;
  }
  // Span-derived starting radius, doubled until the support fits.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& a : mu.atoms())
    for (double v : a.location) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double span = std::max(hi - lo, 1e-9);
  double radius = span / (4.0 * static_cast<double>(target));
  for (int attempt = 0; attempt < 48; ++attempt) {
    out = coarsen(mu, radius);
    if (out.measure.size() <= target) return out;
    radius *= 2.0;
  }
  return out;
}

}  // namespace mvlab

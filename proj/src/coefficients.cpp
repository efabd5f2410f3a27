#include "mvlab/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/metrics.hpp"
#include "mvlab/numeric.hpp"

namespace mvlab {

std::vector<double> CoefficientSet::pairings_of(const PointMeasure& mu) const {
  std::vector<double> out(interactions.size(), 0.0);
  for (std::size_t j = 0; j < interactions.size(); ++j)
    out[j] = pair(interactions[j].eval, mu);
  return out;
}

std::vector<double> CoefficientSet::progeny_at(double t, std::span<const double> x,
                                               Pairings p) const {
  std::vector<double> out(bounds.L_max + 1, 0.0);
  progeny(t, x, p, out);
  return out;
}

double net_growth_c(const CoefficientSet& coeffs, double t,
                    std::span<const double> x, Pairings pairings) {
  const double g = coeffs.death_rate(t, x, pairings);
  std::vector<double> p(coeffs.bounds.L_max + 1, 0.0);
  coeffs.progeny(t, x, pairings, p);
  double mean_litter = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) mean_litter += static_cast<double>(l) * p[l];
  return g * (mean_litter - 1.0);
}

double net_growth_c(const CoefficientSet& coeffs, double t,
                    std::span<const double> x, const PointMeasure& mu) {
  const std::vector<double> pr = coeffs.pairings_of(mu);
  return net_growth_c(coeffs, t, x, pr);
}

OffspringPartition OffspringPartition::from_probabilities(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (v < -1e-15) throw DomainError("progeny probabilities must be nonnegative");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-12)
    throw DomainError("progeny probabilities must sum to 1 (got " +
                      std::to_string(sum) + ")");
  OffspringPartition part;
  part.cumulative.resize(p.size() + 1);
  part.cumulative[0] = 0.0;
  double acc = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    acc += p[l];
    part.cumulative[l + 1] = acc;
  }
  part.cumulative.back() = 1.0;
  return part;
}

std::size_t sample_progeny(double u, const OffspringPartition& part) {
  if (!(u >= 0.0) || u >= 1.0)
    throw DomainError("sample_progeny: u must lie in [0,1)");
  const auto& c = part.cumulative;
  const auto it = std::upper_bound(c.begin(), c.end(), u);
  std::size_t idx = static_cast<std::size_t>(it - c.begin());
  if (idx == 0) idx = 1;                          // u == 0 with empty I_0
  if (idx >= c.size()) idx = c.size() - 1;        // rounding at the top
  return idx - 1;
}

namespace {

PointMeasure random_probe_measure(RngStream& rng, std::size_t dim,
                                  const ProbePlan& plan) {
  PointMeasure mu(dim);
  for (std::size_t a = 0; a < plan.measure_atoms; ++a) {
    std::vector<double> x(dim);
    for (auto& v : x)
      v = (2.0 * rng.u01() - 1.0) * plan.box_halfwidth;
    mu.push_atom(std::move(x), rng.u01() * plan.max_atom_weight);
  }
  return mu;
}

std::vector<double> random_point(RngStream& rng, std::size_t dim, double hw) {
  std::vector<double> x(dim);
  for (auto& v : x) v = (2.0 * rng.u01() - 1.0) * hw;
  return x;
}

double frobenius(std::span<const double> m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return std::sqrt(s);
}

}  // namespace

ValidationReport validate_assumptions(const CoefficientSet& coeffs,
                                      const ProbePlan& plan) {
  ValidationReport rep;
  rep.min_gamma = coeffs.bounds.gamma_bar;
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  const std::size_t d = coeffs.dim;
  RngStream rng(plan.seed, StreamTag::kProbe, {d});

  std::vector<double> b(d), sig(d * d), p(coeffs.bounds.L_max + 1);
  auto probe_once = [&](double t, std::span<const double> x, Pairings pr) {
    coeffs.drift(t, x, pr, b);
    coeffs.diffusion(t, x, pr, sig);
    const double g = coeffs.death_rate(t, x, pr);
    coeffs.progeny(t, x, pr, p);
    rep.sup_drift = std::max(rep.sup_drift, euclid_norm(b));
    rep.sup_diffusion = std::max(rep.sup_diffusion, frobenius(sig));
    rep.max_gamma = std::max(rep.max_gamma, g);
    rep.min_gamma = std::min(rep.min_gamma, g);
    double psum = 0.0, mean_litter = 0.0;
    for (std::size_t l = 0; l < p.size(); ++l) {
      psum += p[l];
      mean_litter += static_cast<double>(l) * p[l];
    }
    rep.max_progeny_sum_error =
        std::max(rep.max_progeny_sum_error, std::fabs(psum - 1.0));
    rep.sup_mean_litter = std::max(rep.sup_mean_litter, mean_litter);
    // sigma sigma^T spectrum
    std::vector<double> ssT(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += sig[i * d + k] * sig[j * d + k];
        ssT[i * d + j] = s;
      }
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, min_eigenvalue_sym(ssT, d));
  };

  for (std::size_t i = 0; i < plan.points; ++i) {
    const double t = rng.u01() * plan.t_max;
    const auto x = random_point(rng, d, plan.box_halfwidth);
    const PointMeasure mu = random_probe_measure(rng, d, plan);
    const auto pr = coeffs.pairings_of(mu);
    probe_once(t, x, pr);
  }

  std::vector<double> b2(d), sig2(d * d);
  for (std::size_t i = 0; i < plan.pairs; ++i) {
    const double t = rng.u01() * plan.t_max;
    const auto x = random_point(rng, d, plan.box_halfwidth);
    const auto y = random_point(rng, d, plan.box_halfwidth);
    const PointMeasure mu = random_probe_measure(rng, d, plan);
    const PointMeasure nu = random_probe_measure(rng, d, plan);
    const auto pr_mu = coeffs.pairings_of(mu);
    const auto pr_nu = coeffs.pairings_of(nu);
    const double denom = euclid_dist(x, y) + bounded_lipschitz(mu, nu);
    if (denom < 1e-12) continue;
    coeffs.drift(t, x, pr_mu, b);
    coeffs.drift(t, y, pr_nu, b2);
    coeffs.diffusion(t, x, pr_mu, sig);
    coeffs.diffusion(t, y, pr_nu, sig2);
    std::vector<double> db(d), dsig(d * d);
    for (std::size_t k = 0; k < d; ++k) db[k] = b[k] - b2[k];
    for (std::size_t k = 0; k < d * d; ++k) dsig[k] = sig[k] - sig2[k];
    const double dc = net_growth_c(coeffs, t, x, pr_mu) -
                      net_growth_c(coeffs, t, y, pr_nu);
    rep.lipschitz_quotient_b =
        std::max(rep.lipschitz_quotient_b, euclid_norm(db) / denom);
    rep.lipschitz_quotient_sigma =
        std::max(rep.lipschitz_quotient_sigma, frobenius(dsig) / denom);
    rep.lipschitz_quotient_c =
        std::max(rep.lipschitz_quotient_c, std::fabs(dc) / denom);
  }

  const auto& bd = coeffs.bounds;
  auto flag = [&](bool ok, const std::string& msg) {
    if (!ok) {
      rep.passed = false;
      rep.violations.push_back(msg);
    }
  };
  const double slack = 1e-9;
  flag(rep.sup_drift <= bd.M + slack, "sup |b| exceeds declared M");
  flag(rep.sup_diffusion <= bd.M + slack, "sup |sigma| exceeds declared M");
  flag(rep.sup_mean_litter <= bd.M + slack, "sup sum l p_l exceeds declared M");
  flag(rep.max_gamma <= bd.gamma_bar + slack, "gamma exceeds gamma_bar");
  flag(rep.min_gamma >= -slack, "gamma is negative");
  flag(rep.max_progeny_sum_error <= 1e-12, "progeny probabilities do not sum to 1");
  flag(rep.lipschitz_quotient_b <= bd.L + slack, "drift Lipschitz quotient exceeds L");
  flag(rep.lipschitz_quotient_sigma <= bd.L + slack,
       "diffusion Lipschitz quotient exceeds L");
  flag(rep.lipschitz_quotient_c <= bd.L + slack,
       "net-growth Lipschitz quotient exceeds L");
  flag(rep.min_eigenvalue >= bd.eps0 - slack,
       "min eigenvalue of sigma sigma^T below eps0");
  return rep;
}

}  // namespace mvlab

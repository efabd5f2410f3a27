#include "mvlab/lifted.hpp"

#include <algorithm>
#include <cmath>

#include "mvlab/errors.hpp"
#include "mvlab/metrics.hpp"
#include "mvlab/numeric.hpp"

namespace mvlab {

PointMeasure project_T_star(const WeightedEnsemble& ens, double scale) {
  if (!(scale > 0.0)) throw DomainError("project_T_star: scale must be positive");
  std::vector<std::size_t> order(ens.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto pa = ens.position(a), pb = ens.position(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  });
  PointMeasure mu(ens.dim);
  mu.reserve(ens.size());
  for (std::size_t i : order) {
    const auto p = ens.position(i);
    mu.push_atom(std::vector<double>(p.begin(), p.end()), scale * ens.z[i]);
  }
  return mu;
}

void PhiDescriptor::sample(RngStream& rng, std::span<double> y_out,
                           double& z_out) const {
  z_out = total_mass;
  if (locations.empty() || total_mass <= 0.0) {
    std::fill(y_out.begin(), y_out.end(), 0.0);
    // Still consume one draw so stream layouts do not depend on the measure.
    (void)rng.u01();
    return;
  }
  const double u = rng.u01();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
  if (idx >= locations.size()) idx = locations.size() - 1;
  std::copy(locations[idx].begin(), locations[idx].end(), y_out.begin());
}

PhiDescriptor lift_Phi(const PointMeasure& mu) {
  PhiDescriptor phi;
  phi.dim = std::max<std::size_t>(mu.dim(), 1);
  phi.total_mass = mass(mu);
  if (mu.empty() || phi.total_mass <= 0.0) {
    // The lift of the zero measure is delta_0 x delta_0.
    phi.total_mass = 0.0;
    phi.locations = {std::vector<double>(phi.dim, 0.0)};
    phi.cumulative = {1.0};
    return phi;
  }
  phi.locations.reserve(mu.size());
  phi.cumulative.reserve(mu.size());
  double acc = 0.0;
  for (const auto& a : mu.atoms()) {
    if (a.weight <= 0.0) continue;
    acc += a.weight / phi.total_mass;
    phi.locations.push_back(a.location);
    phi.cumulative.push_back(acc);
  }
  phi.cumulative.back() = 1.0;
  return phi;
}

namespace {

// One lifted ensemble with its per-particle streams and sandwich bookkeeping.
struct EnsembleState {
  std::size_t d;
  std::vector<double> y;
  std::vector<double> z;
  std::vector<double> z0;
  std::vector<RngStream> diff;

  std::size_t size() const { return z.size(); }
};

EnsembleState sample_initial(const LiftedConfig& cfg, const CoefficientSet& coeffs,
                             const LiftedInit& init) {
  EnsembleState st;
  st.d = coeffs.dim;
  const std::size_t mp = cfg.ensemble;
  st.y.resize(mp * st.d);
  st.z.resize(mp);
  st.z0.resize(mp);
  st.diff.reserve(mp);
  for (std::size_t i = 0; i < mp; ++i) {
    RngStream init_rng(cfg.seed, StreamTag::kInit, {cfg.run_id, i});
    std::span<double> yi(st.y.data() + i * st.d, st.d);
    if (init.descriptor) {
      init.descriptor->sample(init_rng, yi, st.z[i]);
    } else if (init.scenario_init) {
      init.scenario_init->sample_lifted(init_rng, yi);
      st.z[i] = init.scenario_init->initial_mass();
    } else {
      throw ContractError("lifted run requires an initial condition");
    }
    st.z0[i] = st.z[i];
    st.diff.emplace_back(cfg.seed, StreamTag::kLifted, std::initializer_list<std::uint64_t>{cfg.run_id, i});
  }
  return st;
}

std::vector<double> pairings_of_ensemble(const CoefficientSet& coeffs,
                                         const EnsembleState& st, double inv_mp) {
  std::vector<double> pr(coeffs.interactions.size(), 0.0);
  for (std::size_t k = 0; k < pr.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < st.size(); ++i)
      acc += coeffs.interactions[k].eval({st.y.data() + i * st.d, st.d}) * st.z[i];
    pr[k] = acc * inv_mp;
  }
  return pr;
}

// Advances the ensemble over the whole grid. pairings_at(j) supplies the
// measure pairings used in step j; record(j, state) is called at every grid
// point (including 0) before stepping further.
template <typename PairingsAt, typename Record>
void run_steps(const LiftedConfig& cfg, const CoefficientSet& coeffs,
               EnsembleState& st, PairingsAt&& pairings_at, Record&& record) {
  const std::size_t d = st.d;
  const double gm = coeffs.bounds.gamma_bar * coeffs.bounds.M;
  std::vector<double> b(d), sigma(d * d), noise(d);
  record(0, st);
  for (std::size_t j = 0; j < cfg.grid.steps; ++j) {
    const double t = cfg.t0 + cfg.grid.time(j);
    const double dt = cfg.grid.dt;
    const double sq = std::sqrt(dt);
    const std::vector<double> pr = pairings_at(j, st);
    const double elapsed = cfg.grid.time(j + 1);
    const double hi = std::exp(gm * elapsed) * (1.0 + 1e-9);
    const double lo = std::exp(-gm * elapsed) * (1.0 - 1e-9);
    for (std::size_t i = 0; i < st.size(); ++i) {
      std::span<double> yi(st.y.data() + i * d, d);
      const double c = net_growth_c(coeffs, t, yi, pr);
      coeffs.drift(t, yi, pr, b);
      coeffs.diffusion(t, yi, pr, sigma);
      for (std::size_t k = 0; k < d; ++k) noise[k] = st.diff[i].normal();
      for (std::size_t r = 0; r < d; ++r) {
        double dw = 0.0;
        for (std::size_t k = 0; k < d; ++k) dw += sigma[r * d + k] * noise[k];
        yi[r] += b[r] * dt + sq * dw;
        if (!std::isfinite(yi[r]))
          throw NumericsError("lifted state became non-finite at t=" +
                              std::to_string(t));
      }
      st.z[i] *= std::exp(c * dt);
      if (st.z0[i] > 0.0 &&
          (st.z[i] > st.z0[i] * hi || st.z[i] < st.z0[i] * lo))
        throw NumericsError(
            "lifted weight left the exp(+-gamma_bar M t) sandwich; "
            "coefficient bounds are inconsistent");
    }
    record(j + 1, st);
  }
}

PointMeasure project_state(const EnsembleState& st, double scale) {
  WeightedEnsemble ens;
  ens.dim = st.d;
  ens.y = st.y;
  ens.z = st.z;
  return project_T_star(ens, scale);
}

}  // namespace

ReferenceFlow simulate_lifted_self(const LiftedConfig& config,
                                   const CoefficientSet& coeffs,
                                   const LiftedInit& init) {
  if (config.ensemble < 2)
    throw DomainError("simulate_lifted_self: ensemble size must be >= 2");
  ReferenceFlow flow;
  flow.grid = config.grid;
  flow.t0 = config.t0;
  flow.ensemble = config.ensemble;
  flow.method = "self-interaction";
  flow.measures.reserve(config.grid.points());
  EnsembleState st = sample_initial(config, coeffs, init);
  const double inv_mp = 1.0 / static_cast<double>(config.ensemble);
  run_steps(
      config, coeffs, st,
      [&](std::size_t, const EnsembleState& s) {
        return pairings_of_ensemble(coeffs, s, inv_mp);
      },
      [&](std::size_t, const EnsembleState& s) {
        flow.measures.push_back(project_state(s, inv_mp));
      });
  return flow;
}

ReferenceFlow picard_solve(const LiftedConfig& config, const CoefficientSet& coeffs,
                           const LiftedInit& init, std::size_t iterations,
                           double gap_coarsen_radius) {
  if (iterations < 1) throw DomainError("picard_solve: need at least 1 iteration");
  if (config.ensemble < 2)
    throw DomainError("picard_solve: ensemble size must be >= 2");
  const double inv_mp = 1.0 / static_cast<double>(config.ensemble);
  const std::size_t points = config.grid.points();

  // Iteration 0: the flow frozen at the initial projection for all times.
  EnsembleState st0 = sample_initial(config, coeffs, init);
  const PointMeasure initial_projection = project_state(st0, inv_mp);
  std::vector<PointMeasure> prev(points, initial_projection);
  std::vector<std::vector<double>> prev_pairings(
      points, coeffs.pairings_of(initial_projection));

  ReferenceFlow flow;
  flow.grid = config.grid;
  flow.t0 = config.t0;
  flow.ensemble = config.ensemble;
  flow.iteration_gaps.reserve(iterations);

  auto gap_distance = [&](const PointMeasure& a, const PointMeasure& b) {
    if (gap_coarsen_radius <= 0.0) return bounded_lipschitz(a, b);
    const CoarsenResult ca = coarsen(a, gap_coarsen_radius);
    const CoarsenResult cb = coarsen(b, gap_coarsen_radius);
    return bounded_lipschitz(ca.measure, cb.measure) + ca.error_bound +
           cb.error_bound;
  };

  for (std::size_t it = 1; it <= iterations; ++it) {
    // Same initial draws and the same Brownian streams every iteration: the
    // contraction is pathwise.
    EnsembleState st = sample_initial(config, coeffs, init);
    std::vector<PointMeasure> cur(points);
    run_steps(
        config, coeffs, st,
        [&](std::size_t j, const EnsembleState&) { return prev_pairings[j]; },
        [&](std::size_t j, const EnsembleState& s) {
          cur[j] = project_state(s, inv_mp);
        });
    double gap = 0.0;
    for (std::size_t j = 0; j < points; ++j)
      gap = std::max(gap, gap_distance(cur[j], prev[j]));
    flow.iteration_gaps.push_back(gap);
    prev = std::move(cur);
    for (std::size_t j = 0; j < points; ++j)
      prev_pairings[j] = coeffs.pairings_of(prev[j]);
  }
  flow.method = "picard(" + std::to_string(iterations) + ")";
  flow.measures = std::move(prev);
  return flow;
}

}  // namespace mvlab

#include "mvlab/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvlab/errors.hpp"
#include "mvlab/numeric.hpp"

namespace mvlab {

ScalarField constant_field(double value, std::size_t dim) {
  ScalarField f;
  f.name = "constant(" + std::to_string(value) + ")";
  f.eval = [value](std::span<const double>) { return value; };
  f.grad = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  f.hess = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  f.sup_norm = std::fabs(value);
  f.lip = 0.0;
  f.hess_bound = 0.0;
  (void)dim;
  return f;
}

ScalarField coordinate_field(std::size_t axis, std::size_t dim) {
  ScalarField f;
  f.name = "coordinate(" + std::to_string(axis) + ")";
  f.eval = [axis](std::span<const double> x) { return x[axis]; };
  f.grad = [axis](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    out[axis] = 1.0;
  };
  f.hess = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  f.sup_norm = std::numeric_limits<double>::infinity();
  f.lip = 1.0;
  f.hess_bound = 0.0;
  f.bounded = false;
  (void)dim;
  return f;
}

ScalarField gaussian_bump_field(std::vector<double> center, double width) {
  if (!(width > 0.0)) throw DomainError("gaussian bump width must be positive");
  ScalarField f;
  f.name = "gaussian-bump";
  const double w2 = width * width;
  f.eval = [center, w2](std::span<const double> x) {
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - center[i];
      q += d * d;
    }
    return std::exp(-q / (2.0 * w2));
  };
  f.grad = [center, w2](std::span<const double> x, std::span<double> out) {
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - center[i];
      q += d * d;
    }
    const double v = std::exp(-q / (2.0 * w2));
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = -(x[i] - center[i]) / w2 * v;
  };
  f.hess = [center, w2](std::span<const double> x, std::span<double> out) {
    const std::size_t d = x.size();
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double dd = x[i] - center[i];
      q += dd * dd;
    }
    const double v = std::exp(-q / (2.0 * w2));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double di = x[i] - center[i];
        const double dj = x[j] - center[j];
        out[i * d + j] = v * (di * dj / (w2 * w2) - (i == j ? 1.0 / w2 : 0.0));
      }
  };
  f.sup_norm = 1.0;
  f.lip = std::exp(-0.5) / width;
  f.hess_bound = 1.0 / w2;
  return f;
}

ScalarField tanh_coordinate_field(std::size_t axis, double alpha, std::size_t dim) {
  ScalarField f;
  f.name = "tanh-coordinate(" + std::to_string(axis) + ")";
  f.eval = [axis, alpha](std::span<const double> x) {
    return std::tanh(alpha * x[axis]);
  };
  f.grad = [axis, alpha](std::span<const double> x, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const double th = std::tanh(alpha * x[axis]);
    out[axis] = alpha * (1.0 - th * th);
  };
  f.hess = [axis, alpha, dim](std::span<const double> x, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const double th = std::tanh(alpha * x[axis]);
    out[axis * dim + axis] = -2.0 * alpha * alpha * th * (1.0 - th * th);
  };
  f.sup_norm = 1.0;
  f.lip = std::fabs(alpha);
  f.hess_bound = 0.7699 * alpha * alpha + 1e-6;
  return f;
}

ScalarField product_field(const ScalarField& a, const ScalarField& b,
                          std::size_t dim) {
  ScalarField f;
  f.name = a.name + "*" + b.name;
  const auto ea = a.eval, eb = b.eval;
  const auto ga = a.grad, gb = b.grad;
  const auto ha = a.hess, hb = b.hess;
  f.eval = [ea, eb](std::span<const double> x) { return ea(x) * eb(x); };
  f.grad = [ea, eb, ga, gb, dim](std::span<const double> x, std::span<double> out) {
    std::vector<double> da(dim), db(dim);
    ga(x, da);
    gb(x, db);
    const double va = ea(x), vb = eb(x);
    for (std::size_t i = 0; i < dim; ++i) out[i] = da[i] * vb + va * db[i];
  };
  f.hess = [ea, eb, ga, gb, ha, hb, dim](std::span<const double> x,
                                         std::span<double> out) {
    std::vector<double> da(dim), db(dim), Ha(dim * dim), Hb(dim * dim);
    ga(x, da);
    gb(x, db);
    ha(x, Ha);
    hb(x, Hb);
    const double va = ea(x), vb = eb(x);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        out[i * dim + j] = Ha[i * dim + j] * vb + Hb[i * dim + j] * va +
                           da[i] * db[j] + da[j] * db[i];
  };
  f.sup_norm = a.sup_norm * b.sup_norm;
  f.lip = a.lip * b.sup_norm + b.lip * a.sup_norm;
  f.hess_bound =
      a.hess_bound * b.sup_norm + b.hess_bound * a.sup_norm + 2.0 * a.lip * b.lip;
  f.bounded = a.bounded && b.bounded;
  return f;
}

ScalarField field_from_name(const std::string& name, std::size_t dim) {
  if (name == "constant") return constant_field(1.0, dim);
  if (name == "gaussian-bump")
    return gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0);
  if (name == "tanh-coordinate") return tanh_coordinate_field(0, 1.0, dim);
  if (name == "coordinate") return coordinate_field(0, dim);
  if (name == "bump-times-tanh")
    return product_field(gaussian_bump_field(std::vector<double>(dim, 0.0), 1.0),
                         tanh_coordinate_field(0, 1.0, dim), dim);
  throw ConfigError("unknown test-function name '" + name + "'");
}

double QuadraticOuter::eval(std::span<const double> u) const {
  double v = c0;
  for (std::size_t j = 0; j < a.size(); ++j) v += a[j] * u[j];
  if (!B.empty()) {
    const std::size_t m = a.size();
    double q = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < m; ++k) q += u[j] * B[j * m + k] * u[k];
    v += 0.5 * q;
  }
  return v;
}

void QuadraticOuter::grad(std::span<const double> u, std::span<double> out) const {
  const std::size_t m = a.size();
  for (std::size_t j = 0; j < m; ++j) {
    double v = a[j];
    if (!B.empty())
      for (std::size_t k = 0; k < m; ++k) v += B[j * m + k] * u[k];
    out[j] = v;
  }
}

double QuadraticOuter::hess(std::size_t j, std::size_t k) const {
  if (B.empty()) return 0.0;
  return B[j * a.size() + k];
}

CylinderFunctional::CylinderFunctional(std::vector<ScalarField> inner,
                                       QuadraticOuter outer)
    : inner_(std::move(inner)), outer_(std::move(outer)) {
  if (outer_.a.size() != inner_.size())
    throw ShapeError("cylinder functional arity mismatch");
  if (!outer_.B.empty() && outer_.B.size() != inner_.size() * inner_.size())
    throw ShapeError("cylinder outer Hessian has wrong size");
}

std::vector<double> CylinderFunctional::pairing_vector(const PointMeasure& mu) const {
  std::vector<double> u(inner_.size(), 0.0);
  for (std::size_t j = 0; j < inner_.size(); ++j) u[j] = pair(inner_[j].eval, mu);
  return u;
}

double CylinderFunctional::eval_at(std::span<const double> pairings) const {
  return outer_.eval(pairings);
}

double CylinderFunctional::flat_derivative_at(std::span<const double> pairings,
                                              std::span<const double> x) const {
  std::vector<double> g(inner_.size());
  outer_.grad(pairings, g);
  double v = 0.0;
  for (std::size_t j = 0; j < inner_.size(); ++j) v += g[j] * inner_[j].eval(x);
  return v;
}

double CylinderFunctional::second_flat_derivative_at(
    std::span<const double> pairings, std::span<const double> x,
    std::span<const double> y) const {
  (void)pairings;
  double v = 0.0;
  for (std::size_t j = 0; j < inner_.size(); ++j)
    for (std::size_t k = 0; k < inner_.size(); ++k) {
      const double bjk = outer_.hess(j, k);
      if (bjk != 0.0) v += bjk * inner_[j].eval(x) * inner_[k].eval(y);
    }
  return v;
}

void CylinderFunctional::intrinsic_derivative_at(std::span<const double> pairings,
                                                 std::span<const double> x,
                                                 std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> g(inner_.size());
  outer_.grad(pairings, g);
  std::vector<double> gf(out.size());
  for (std::size_t j = 0; j < inner_.size(); ++j) {
    if (g[j] == 0.0) continue;
    inner_[j].grad(x, gf);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[j] * gf[i];
  }
}

void CylinderFunctional::flat_hessian_at(std::span<const double> pairings,
                                         std::span<const double> x,
                                         std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> g(inner_.size());
  outer_.grad(pairings, g);
  std::vector<double> h(out.size());
  for (std::size_t j = 0; j < inner_.size(); ++j) {
    if (g[j] == 0.0) continue;
    inner_[j].hess(x, h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[j] * h[i];
  }
}

void CylinderFunctional::second_intrinsic_at(std::span<const double> pairings,
                                             std::span<const double> x,
                                             std::span<const double> y,
                                             std::span<double> out) const {
  (void)pairings;
  const std::size_t d = x.size();
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> gx(d), gy(d);
  for (std::size_t j = 0; j < inner_.size(); ++j)
    for (std::size_t k = 0; k < inner_.size(); ++k) {
      const double bjk = outer_.hess(j, k);
      if (bjk == 0.0) continue;
      inner_[j].grad(x, gx);
      inner_[k].grad(y, gy);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t l = 0; l < d; ++l) out[i * d + l] += bjk * gx[i] * gy[l];
    }
}

double eval_G(const CylinderFunctional& g, const PointMeasure& mu) {
  const auto u = g.pairing_vector(mu);
  return g.eval_at(u);
}

double flat_derivative_G(const CylinderFunctional& g, const PointMeasure& mu,
                         std::span<const double> x) {
  const auto u = g.pairing_vector(mu);
  return g.flat_derivative_at(u, x);
}

double second_flat_derivative_G(const CylinderFunctional& g, const PointMeasure& mu,
                                std::span<const double> x,
                                std::span<const double> y) {
  const auto u = g.pairing_vector(mu);
  return g.second_flat_derivative_at(u, x, y);
}

CylinderFunctional mass_functional(std::size_t dim) {
  QuadraticOuter outer;
  outer.a = {1.0};
  return CylinderFunctional({constant_field(1.0, dim)}, outer);
}

CylinderFunctional pairing_functional(ScalarField f) {
  QuadraticOuter outer;
  outer.a = {1.0};
  return CylinderFunctional({std::move(f)}, outer);
}

CylinderFunctional squared_pairing_functional(ScalarField f) {
  QuadraticOuter outer;
  outer.a = {0.0};
  outer.B = {2.0};
  return CylinderFunctional({std::move(f)}, outer);
}

CylinderFunctional product_pairing_functional(ScalarField f1, ScalarField f2) {
  QuadraticOuter outer;
  outer.a = {0.0, 0.0};
  outer.B = {0.0, 1.0, 1.0, 0.0};
  std::vector<ScalarField> inner;
  inner.push_back(std::move(f1));
  inner.push_back(std::move(f2));
  return CylinderFunctional(std::move(inner), outer);
}

TimeWeight constant_weight(double v) {
  TimeWeight w;
  w.value = [v](double) { return v; };
  w.deriv = [](double) { return 0.0; };
  return w;
}

TimeWeight linear_weight(double a, double b) {
  TimeWeight w;
  w.value = [a, b](double t) { return a + b * t; };
  w.deriv = [b](double) { return b; };
  return w;
}

TimeCylinderFunctional static_functional(CylinderFunctional g, std::string name) {
  TimeCylinderFunctional f;
  f.g = std::move(g);
  f.name = std::move(name);
  return f;
}

TimeSpaceFunction static_test_function(const ScalarField& f) {
  TimeSpaceFunction ts;
  ts.name = f.name;
  const auto ev = f.eval;
  const auto gr = f.grad;
  const auto he = f.hess;
  ts.eval = [ev](double, std::span<const double> x) { return ev(x); };
  ts.time_deriv = [](double, std::span<const double>) { return 0.0; };
  ts.grad = [gr](double, std::span<const double> x, std::span<double> out) {
    gr(x, out);
  };
  ts.hess = [he](double, std::span<const double> x, std::span<double> out) {
    he(x, out);
  };
  ts.sup_norm = f.sup_norm;
  ts.sup_time_deriv = 0.0;
  ts.sup_grad = f.lip;
  ts.sup_hess = f.hess_bound;
  return ts;
}

TimeSpaceFunction time_scaled_test_function(const ScalarField& f, double rate) {
  TimeSpaceFunction ts = static_test_function(f);
  ts.name = f.name + "*exp(" + std::to_string(rate) + " t)";
  const auto ev = f.eval;
  const auto gr = f.grad;
  const auto he = f.hess;
  ts.eval = [ev, rate](double t, std::span<const double> x) {
    return std::exp(rate * t) * ev(x);
  };
  ts.time_deriv = [ev, rate](double t, std::span<const double> x) {
    return rate * std::exp(rate * t) * ev(x);
  };
  ts.grad = [gr, rate](double t, std::span<const double> x, std::span<double> out) {
    gr(x, out);
    const double s = std::exp(rate * t);
    for (auto& v : out) v *= s;
  };
  ts.hess = [he, rate](double t, std::span<const double> x, std::span<double> out) {
    he(x, out);
    const double s = std::exp(rate * t);
    for (auto& v : out) v *= s;
  };
  return ts;
}

double fp_residual(const TimeSpaceFunction& f, const ReferenceFlow& flow,
                   const CoefficientSet& coeffs) {
  if (!f.eval || !f.time_deriv || !f.grad || !f.hess)
    throw ContractError("fp_residual: test function must supply value, time "
                        "derivative, gradient and Hessian");
  const std::size_t d = coeffs.dim;
  std::vector<double> gradbuf(d), hessbuf(d * d), b(d), sigma(d * d);
  const auto integrand = [&](double t, const PointMeasure& mu) {
    const auto pr = coeffs.pairings_of(mu);
    std::vector<double> terms(mu.size());
    const auto& atoms = mu.atoms();
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& x = atoms[i].location;
      coeffs.drift(t, x, pr, b);
      coeffs.diffusion(t, x, pr, sigma);
      f.grad(t, x, gradbuf);
      f.hess(t, x, hessbuf);
      double lf = 0.0;
      for (std::size_t r = 0; r < d; ++r) lf += b[r] * gradbuf[r];
      // tr(Hess f sigma sigma^T) / 2
      double tr = 0.0;
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c2 = 0; c2 < d; ++c2) {
          double ssT = 0.0;
          for (std::size_t k = 0; k < d; ++k)
            ssT += sigma[r * d + k] * sigma[c2 * d + k];
          tr += hessbuf[r * d + c2] * ssT;
        }
      lf += 0.5 * tr;
      const double c = net_growth_c(coeffs, t, x, pr);
      terms[i] = atoms[i].weight *
                 (f.time_deriv(t, x) + lf + c * f.eval(t, x));
    }
    return pairwise_sum(terms);
  };

  const double t_end = flow.t0 + flow.grid.horizon;
  auto f_of = [&](double t, const PointMeasure& mu) {
    return pair([&](std::span<const double> x) { return f.eval(t, x); }, mu);
  };
  double sum = 0.0;
  for (std::size_t j = 0; j < flow.grid.steps; ++j)
    sum += flow.grid.dt * integrand(flow.t0 + flow.grid.time(j), flow.measures[j]);
  return f_of(t_end, flow.measures.back()) - f_of(flow.t0, flow.measures.front()) -
         sum;
}

namespace {

// Common drift integrand of the empirical identity at one grid time.
// Includes the 1/(2N) trace correction and the exact jump compensator.
double empirical_drift_term(const TimeCylinderFunctional& f,
                            const CoefficientSet& coeffs, double t,
                            const PointMeasure& mu, double inv_n) {
  const std::size_t d = coeffs.dim;
  const auto pr = coeffs.pairings_of(mu);
  const auto u = f.g.pairing_vector(mu);
  const double w1 = f.w1.value(t);
  std::vector<double> b(d), sigma(d * d), grad(d), hess(d * d), d2(d * d);
  std::vector<double> progeny(coeffs.bounds.L_max + 1);
  std::vector<double> fx(f.g.arity());
  std::vector<double> shifted(u.size());

  double acc = f.time_derivative(t, u);
  std::vector<double> terms(mu.size());
  const auto& atoms = mu.atoms();
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const auto& x = atoms[i].location;
    coeffs.drift(t, x, pr, b);
    coeffs.diffusion(t, x, pr, sigma);
    // <L dF/dmu, mu>
    f.g.intrinsic_derivative_at(u, x, grad);
    f.g.flat_hessian_at(u, x, hess);
    double lf = 0.0;
    for (std::size_t r = 0; r < d; ++r) lf += b[r] * grad[r];
    double tr = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c2 = 0; c2 < d; ++c2) {
        double ssT = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          ssT += sigma[r * d + k] * sigma[c2 * d + k];
        tr += hess[r * d + c2] * ssT;
      }
    double term = w1 * (lf + 0.5 * tr);

    // (1/2N) tr(D_mu^2 F(x,x) sigma sigma^T)
    f.g.second_intrinsic_at(u, x, x, d2);
    double tr2 = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c2 = 0; c2 < d; ++c2) {
        double ssT = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          ssT += sigma[r * d + k] * sigma[c2 * d + k];
        tr2 += d2[r * d + c2] * ssT;
      }
    term += 0.5 * inv_n * w1 * tr2;

    // N * gamma sum_l p_l [F(mu + (l-1)/N delta_x) - F(mu)] evaluated as the
    // exact pairing shift (only the m pairings move for a cylinder).
    const double rate = coeffs.death_rate(t, x, pr);
    if (rate > 0.0) {
      coeffs.progeny(t, x, pr, progeny);
      for (std::size_t j = 0; j < fx.size(); ++j) fx[j] = f.g.inner()[j].eval(x);
      double jump = 0.0;
      const double base = f.g.eval_at(u);
      for (std::size_t l = 0; l < progeny.size(); ++l) {
        if (progeny[l] == 0.0 || l == 1) continue;
        const double shift = (static_cast<double>(l) - 1.0) * inv_n;
        for (std::size_t j = 0; j < u.size(); ++j)
          shifted[j] = u[j] + shift * fx[j];
        jump += progeny[l] * (f.g.eval_at(shifted) - base);
      }
      term += rate * jump * w1 / inv_n;  // the N factor
    }
    terms[i] = atoms[i].weight * term;
  }
  acc += pairwise_sum(terms);
  return acc;
}

}  // namespace

double ito_drift_environment(const TimeCylinderFunctional& f, double t,
                             const PointMeasure& mu,
                             const CoefficientSet& coeffs) {
  const std::size_t d = coeffs.dim;
  const auto pr = coeffs.pairings_of(mu);
  const auto u = f.g.pairing_vector(mu);
  const double w1 = f.w1.value(t);
  std::vector<double> b(d), sigma(d * d), grad(d), hess(d * d);
  double acc = f.time_derivative(t, u);
  std::vector<double> terms(mu.size());
  const auto& atoms = mu.atoms();
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const auto& x = atoms[i].location;
    coeffs.drift(t, x, pr, b);
    coeffs.diffusion(t, x, pr, sigma);
    f.g.intrinsic_derivative_at(u, x, grad);
    f.g.flat_hessian_at(u, x, hess);
    double lf = 0.0;
    for (std::size_t r = 0; r < d; ++r) lf += b[r] * grad[r];
    double tr = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c2 = 0; c2 < d; ++c2) {
        double ssT = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          ssT += sigma[r * d + k] * sigma[c2 * d + k];
        tr += hess[r * d + c2] * ssT;
      }
    const double c = net_growth_c(coeffs, t, x, pr);
    const double df = f.g.flat_derivative_at(u, x);
    terms[i] = atoms[i].weight * (w1 * (lf + 0.5 * tr) + c * w1 * df);
  }
  return acc + pairwise_sum(terms);
}

ItoResidualAccumulator::ItoResidualAccumulator(const TimeCylinderFunctional* f,
                                               const CoefficientSet* coeffs,
                                               std::size_t populations, double dt,
                                               std::size_t steps)
    : f_(f), coeffs_(coeffs),
      inv_n_(1.0 / static_cast<double>(populations)), dt_(dt), steps_(steps) {}

void ItoResidualAccumulator::on_grid_point(std::size_t index, double time,
                                           const PointMeasure& mu) {
  const auto u = f_->g.pairing_vector(mu);
  if (index == 0) f0_ = f_->eval(time, u);
  if (index < steps_)
    residual_ -= dt_ * empirical_drift_term(*f_, *coeffs_, time, mu, inv_n_);
  if (index == steps_) residual_ += f_->eval(time, u) - f0_;
}

double ito_residual_empirical(const TimeCylinderFunctional& f,
                              const BranchingTrajectory& traj,
                              const CoefficientSet& coeffs) {
  if (traj.measures.size() != traj.grid.points())
    throw ContractError("ito_residual_empirical: trajectory is missing measures");
  if (traj.events.empty() && traj.population_log.empty())
    throw ContractError("ito_residual_empirical: trajectory carries no event log");
  ItoResidualAccumulator acc(&f, &coeffs, traj.populations, traj.grid.dt,
                             traj.grid.steps);
  for (std::size_t j = 0; j < traj.measures.size(); ++j)
    acc.on_grid_point(j, traj.grid.time(j), traj.measures[j]);
  return acc.residual();
}

ValueEstimate value_function_U(double t, const PointMeasure& mu,
                               const CylinderFunctional& g,
                               const CoefficientSet& coeffs,
                               const ValueSolverSettings& solver) {
  const double horizon = solver.grid.horizon;
  if (t > horizon + 1e-12)
    throw DomainError("value_function_U: t beyond the horizon");
  ValueEstimate est;
  if (t >= horizon - 1e-12) {
    est.value = eval_G(g, mu);
    est.exact = true;
    return est;
  }
  const double remaining = horizon - t;
  const double ratio = remaining / solver.grid.dt;
  const std::size_t steps = static_cast<std::size_t>(std::llround(ratio));
  if (steps == 0 || std::fabs(ratio - static_cast<double>(steps)) > 1e-9)
    throw DomainError("value_function_U: t must be grid-aligned");
  const PhiDescriptor phi = lift_Phi(mu);
  std::vector<double> values(solver.restarts);
  for (std::size_t r = 0; r < solver.restarts; ++r) {
    // Fresh independent randomness per restart.
    LiftedConfig cfg;
    cfg.ensemble = solver.ensemble;
    cfg.grid = SimGrid(remaining, solver.grid.dt);
    cfg.t0 = t;
    cfg.seed = derive_key(solver.seed, StreamTag::kValue, {r});
    const ReferenceFlow flow =
        simulate_lifted_self(cfg, coeffs, LiftedInit::from_descriptor(phi));
    values[r] = eval_G(g, flow.terminal());
  }
  const MeanStderr ms = mean_stderr(values);
  est.value = ms.mean;
  est.stderr_ = ms.stderr_;
  return est;
}

FlowConstancyResult flow_constancy_check(const CylinderFunctional& g,
                                         const CoefficientSet& coeffs,
                                         const InitialCondition& init,
                                         std::span<const double> times,
                                         const ValueSolverSettings& solver) {
  // One primary flow from time 0.
  LiftedConfig cfg;
  cfg.ensemble = solver.ensemble;
  cfg.grid = solver.grid;
  cfg.t0 = 0.0;
  cfg.seed = solver.seed;
  const ReferenceFlow primary =
      simulate_lifted_self(cfg, coeffs, LiftedInit::from_scenario(init));

  auto grid_index = [&](double s) {
    const double ratio = s / solver.grid.dt;
    const std::size_t j = static_cast<std::size_t>(std::llround(ratio));
    if (j > solver.grid.steps ||
        std::fabs(ratio - static_cast<double>(j)) > 1e-9)
      throw DomainError("flow_constancy_check: time not on the grid");
    return j;
  };

  FlowConstancyResult out;
  ValueSolverSettings base_solver = solver;
  base_solver.seed = derive_key(solver.seed, StreamTag::kValue, {0xB00});
  const ValueEstimate u0 =
      value_function_U(0.0, primary.measures.front(), g, coeffs, base_solver);
  out.baseline = u0.value;
  out.baseline_stderr = u0.stderr_;

  for (std::size_t k = 0; k < times.size(); ++k) {
    const double s = times[k];
    const std::size_t j = grid_index(s);
    ValueSolverSettings s_solver = solver;
    s_solver.seed = derive_key(solver.seed, StreamTag::kValue, {0xC00 + k});
    // s == 0 is literally the baseline quantity; reuse its estimate.
    const ValueEstimate us =
        s == 0.0 ? u0
                 : value_function_U(s, primary.measures[j], g, coeffs, s_solver);
    FlowConstancyResult::Sample sample;
    sample.s = s;
    sample.value = us.value;
    sample.stderr_ = us.stderr_;
    sample.deviation = std::fabs(us.value - u0.value);
    sample.combined_stderr = std::sqrt(us.stderr_ * us.stderr_ +
                                       u0.stderr_ * u0.stderr_);
    out.max_deviation = std::max(out.max_deviation, sample.deviation);
    if (sample.combined_stderr > 0.0)
      out.worst_sigma_ratio = std::max(out.worst_sigma_ratio,
                                       sample.deviation / sample.combined_stderr);
    out.samples.push_back(sample);
  }
  return out;
}

}  // namespace mvlab

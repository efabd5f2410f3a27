#include "mvlab/scenario.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mvlab/errors.hpp"

namespace mvlab {

namespace {

using nlohmann::json;

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

double get_param(const std::map<std::string, double>& params, const std::string& key,
                 double fallback) {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

std::vector<double> progeny_from_params(const std::map<std::string, double>& params,
                                        std::size_t l_max) {
  std::vector<double> p(l_max + 1, 0.0);
  bool any = false;
  for (const auto& [key, value] : params) {
    if (key.size() < 2 || key[0] != 'p') continue;
    if (!std::all_of(key.begin() + 1, key.end(), [](char c) { return std::isdigit(c); }))
      continue;
    const std::size_t l = std::stoul(key.substr(1));
    if (l > l_max)
      throw ConfigError("progeny parameter '" + key + "' exceeds L_max", key);
    p[l] = value;
    any = true;
  }
  if (!any) p[0] = 1.0;
  double sum = 0.0;
  for (double v : p) sum += v;
  if (std::fabs(sum - 1.0) > 1e-12)
    throw ConfigError("progeny probabilities must sum to 1");
  return p;
}

}  // namespace

Population InitialCondition::sample_population(RngStream& rng) const {
  Population pop;
  pop.particles.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Particle part;
    part.label = Label({static_cast<std::uint32_t>(i + 1)});
    part.birth_time = 0.0;
    part.position = mean;
    if (kind == Kind::kGaussian)
      for (auto& v : part.position) v += stddev * rng.normal();
    pop.particles.push_back(std::move(part));
  }
  return pop;
}

void InitialCondition::sample_lifted(RngStream& rng, std::span<double> y_out) const {
  for (std::size_t k = 0; k < y_out.size(); ++k) {
    y_out[k] = mean[k];
    if (kind == Kind::kGaussian) y_out[k] += stddev * rng.normal();
  }
}

std::string family_name(ScenarioFamily f) {
  switch (f) {
    case ScenarioFamily::kConstant: return "constant";
    case ScenarioFamily::kPureDeath: return "pure-death";
    case ScenarioFamily::kBinaryBranching: return "binary-branching";
    case ScenarioFamily::kMeanField: return "mean-field";
  }
  return "constant";
}

ScenarioFamily family_from_name(const std::string& name) {
  if (name == "constant") return ScenarioFamily::kConstant;
  if (name == "pure-death") return ScenarioFamily::kPureDeath;
  if (name == "binary-branching") return ScenarioFamily::kBinaryBranching;
  if (name == "mean-field") return ScenarioFamily::kMeanField;
  throw ConfigError("unknown scenario family '" + name + "'", "family");
}

CoefficientSet Scenario::coefficients() const {
  CoefficientSet cs;
  cs.dim = dim;
  cs.bounds = bounds;
  const std::size_t d = dim;

  if (family == ScenarioFamily::kMeanField) {
    const double a = get_param(params, "a", 0.5);
    const double sig0 = get_param(params, "sigma", 1.0);
    const double gamma0 = get_param(params, "gamma0", bounds.gamma_bar);
    const double kappa = get_param(params, "kappa", 1.0);
    const double mass_target = get_param(params, "mass_target", init.initial_mass());
    const std::vector<double> p = progeny_from_params(params, bounds.L_max);
    if (gamma0 > bounds.gamma_bar + 1e-12)
      throw ConfigError("gamma0 exceeds gamma_bar");

    cs.interactions.push_back(InteractionFn{
        "mass", [](std::span<const double>) { return 1.0; }, 1.0, 0.0});
    cs.interactions.push_back(InteractionFn{
        "tanh_x1", [](std::span<const double> x) { return std::tanh(x[0]); }, 1.0,
        1.0});
    cs.drift = [a](double, std::span<const double> x, Pairings pr,
                   std::span<double> out) {
      const double shift = a * std::tanh(pr[1]);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] + shift;
    };
    cs.diffusion = [sig0, d](double, std::span<const double>, Pairings,
                             std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t i = 0; i < d; ++i) out[i * d + i] = sig0;
    };
    cs.death_rate = [gamma0, kappa, mass_target](double, std::span<const double>,
                                                 Pairings pr) {
      return gamma0 * sigmoid(kappa * (mass_target - pr[0]));
    };
    cs.progeny = [p](double, std::span<const double>, Pairings,
                     std::span<double> out) {
      std::copy(p.begin(), p.end(), out.begin());
    };
    return cs;
  }

  // Constant-coefficient families (pure-death and binary-branching are
  // presets of the same structure).
  const double b0 = get_param(params, "b", 0.0);
  const double sig0 = get_param(params, "sigma", 1.0);
  const double gamma = get_param(params, "gamma", 0.0);
  const std::vector<double> p = progeny_from_params(params, bounds.L_max);
  if (gamma > bounds.gamma_bar + 1e-12)
    throw ConfigError("gamma exceeds gamma_bar");
  cs.drift = [b0](double, std::span<const double> x, Pairings,
                  std::span<double> out) {
    std::fill(out.begin(), out.end(), b0);
    (void)x;
  };
  cs.diffusion = [sig0, d](double, std::span<const double>, Pairings,
                           std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = sig0;
  };
  cs.death_rate = [gamma](double, std::span<const double>, Pairings) {
    return gamma;
  };
  cs.progeny = [p](double, std::span<const double>, Pairings,
                   std::span<double> out) {
    std::copy(p.begin(), p.end(), out.begin());
  };
  return cs;
}

namespace {

CoefficientBounds default_bounds(ScenarioFamily family, std::size_t d,
                                 const std::map<std::string, double>& params) {
  CoefficientBounds bd;
  const double sd = std::sqrt(static_cast<double>(d));
  if (family == ScenarioFamily::kMeanField) {
    const double a = get_param(params, "a", 0.5);
    const double sig0 = get_param(params, "sigma", 1.0);
    const double gamma0 = get_param(params, "gamma0", 0.6);
    const double kappa = get_param(params, "kappa", 1.0);
    const double p2 = get_param(params, "p2", 0.6);
    bd.L_max = 2;
    bd.gamma_bar = gamma0;
    // Probe positions live in [-3,3]^d; the mean-litter bound is 2 p2.
    bd.M = std::max({(3.0 + a) * sd, sig0 * sd, 2.0 * p2});
    bd.L = std::max({1.0 + sd * a, gamma0 * kappa / 4.0 * std::fabs(2.0 * p2 - 1.0),
                     1e-3});
    bd.eps0 = sig0 * sig0;
    return bd;
  }
  const double b0 = get_param(params, "b", 0.0);
  const double sig0 = get_param(params, "sigma", 1.0);
  const double gamma = get_param(params, "gamma", 0.0);
  std::size_t l_max = 2;
  for (const auto& [key, value] : params) {
    (void)value;
    if (key.size() >= 2 && key[0] == 'p' &&
        std::all_of(key.begin() + 1, key.end(), [](char c) { return std::isdigit(c); }))
      l_max = std::max(l_max, static_cast<std::size_t>(std::stoul(key.substr(1))));
  }
  bd.L_max = l_max;
  bd.gamma_bar = std::max(gamma, 1e-12);
  double mean_litter = 0.0;
  const auto p = progeny_from_params(params, l_max);
  for (std::size_t l = 0; l < p.size(); ++l) mean_litter += static_cast<double>(l) * p[l];
  bd.M = std::max({std::fabs(b0) * sd, sig0 * sd, mean_litter, 1.0});
  bd.L = 1e-3;  // constants: any positive L verifies
  bd.eps0 = sig0 * sig0;
  return bd;
}

const std::vector<std::string>& family_param_keys(ScenarioFamily family) {
  static const std::vector<std::string> constant_keys = {"b", "sigma", "gamma"};
  static const std::vector<std::string> mean_field_keys = {
      "a", "sigma", "gamma0", "kappa", "mass_target"};
  return family == ScenarioFamily::kMeanField ? mean_field_keys : constant_keys;
}

bool is_progeny_key(const std::string& key) {
  return key.size() >= 2 && key[0] == 'p' &&
         std::all_of(key.begin() + 1, key.end(),
                     [](char c) { return std::isdigit(c); });
}

}  // namespace

Scenario make_constant_scenario() {
  Scenario s;
  s.family = ScenarioFamily::kConstant;
  s.dim = 1;
  s.params = {{"b", 0.0}, {"sigma", 1.0}, {"gamma", 0.5}, {"p1", 1.0}};
  s.init.kind = InitialCondition::Kind::kGaussian;
  s.init.count = 4;
  s.init.mean = {0.0};
  s.init.stddev = 1.0;
  s.bounds = default_bounds(s.family, s.dim, s.params);
  return s;
}

Scenario make_pure_death_scenario() {
  Scenario s = make_constant_scenario();
  s.family = ScenarioFamily::kPureDeath;
  s.params = {{"b", 0.0}, {"sigma", 1.0}, {"gamma", 0.5}, {"p0", 1.0}};
  s.bounds = default_bounds(s.family, s.dim, s.params);
  return s;
}

Scenario make_binary_branching_scenario() {
  Scenario s = make_constant_scenario();
  s.family = ScenarioFamily::kBinaryBranching;
  s.params = {{"b", 0.0}, {"sigma", 1.0}, {"gamma", 1.0}, {"p2", 1.0}};
  s.init.count = 2;
  s.bounds = default_bounds(s.family, s.dim, s.params);
  return s;
}

Scenario make_mean_field_scenario() {
  Scenario s;
  s.family = ScenarioFamily::kMeanField;
  s.dim = 1;
  s.params = {{"a", 0.5},   {"sigma", 1.0},        {"gamma0", 0.6}, {"kappa", 1.0},
              {"p0", 0.4},  {"mass_target", 2.0},  {"p2", 0.6}};
  s.init.kind = InitialCondition::Kind::kGaussian;
  s.init.count = 2;
  s.init.mean = {0.0};
  s.init.stddev = 0.5;
  s.bounds = default_bounds(s.family, s.dim, s.params);
  return s;
}

Scenario make_scenario(ScenarioFamily family) {
  switch (family) {
    case ScenarioFamily::kConstant: return make_constant_scenario();
    case ScenarioFamily::kPureDeath: return make_pure_death_scenario();
    case ScenarioFamily::kBinaryBranching: return make_binary_branching_scenario();
    case ScenarioFamily::kMeanField: return make_mean_field_scenario();
  }
  return make_constant_scenario();
}

Scenario parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scenario config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "family" && key != "d" && key != "params" && key != "bounds" &&
        key != "init")
      throw ConfigError("unknown scenario key '" + key + "'", key);
  }
  if (!j.contains("family")) throw ConfigError("scenario is missing 'family'");
  Scenario s = make_scenario(family_from_name(j.at("family").get<std::string>()));
  if (j.contains("d")) s.dim = j.at("d").get<std::size_t>();
  if (s.dim == 0 || s.dim > 16) throw ConfigError("dimension out of range");
  if (j.contains("params")) {
    s.params.clear();
    const auto& allowed = family_param_keys(s.family);
    for (const auto& [key, value] : j.at("params").items()) {
      const bool known = is_progeny_key(key) ||
                         std::find(allowed.begin(), allowed.end(), key) != allowed.end();
      if (!known) throw ConfigError("unknown scenario parameter '" + key + "'", key);
      if (!value.is_number())
        throw ConfigError("scenario parameter '" + key + "' must be numeric", key);
      s.params[key] = value.get<double>();
    }
  }
  s.bounds = default_bounds(s.family, s.dim, s.params);
  if (j.contains("bounds")) {
    const auto& jb = j.at("bounds");
    for (const auto& [key, value] : jb.items()) {
      (void)value;
      if (key != "M" && key != "L" && key != "gamma_bar" && key != "eps0" &&
          key != "L_max")
        throw ConfigError("unknown bounds key '" + key + "'", key);
    }
    if (jb.contains("M")) s.bounds.M = jb.at("M").get<double>();
    if (jb.contains("L")) s.bounds.L = jb.at("L").get<double>();
    if (jb.contains("gamma_bar")) s.bounds.gamma_bar = jb.at("gamma_bar").get<double>();
    if (jb.contains("eps0")) s.bounds.eps0 = jb.at("eps0").get<double>();
    if (jb.contains("L_max")) s.bounds.L_max = jb.at("L_max").get<std::size_t>();
  }
  if (j.contains("init")) {
    const auto& ji = j.at("init");
    for (const auto& [key, value] : ji.items()) {
      (void)value;
      if (key != "kind" && key != "count" && key != "mean" && key != "stddev")
        throw ConfigError("unknown init key '" + key + "'", key);
    }
    if (ji.contains("kind")) {
      const std::string kind = ji.at("kind").get<std::string>();
      if (kind == "point")
        s.init.kind = InitialCondition::Kind::kPoint;
      else if (kind == "gaussian")
        s.init.kind = InitialCondition::Kind::kGaussian;
      else
        throw ConfigError("init kind must be 'point' or 'gaussian'", "kind");
    }
    if (ji.contains("count")) s.init.count = ji.at("count").get<std::size_t>();
    if (ji.contains("mean")) s.init.mean = ji.at("mean").get<std::vector<double>>();
    if (ji.contains("stddev")) {
      if (s.init.kind == InitialCondition::Kind::kPoint)
        throw ConfigError("'stddev' is not valid for a point initial condition",
                          "stddev");
      s.init.stddev = ji.at("stddev").get<double>();
    }
  }
  if (s.init.mean.size() != s.dim) {
    if (s.init.mean.size() == 1)
      s.init.mean.assign(s.dim, s.init.mean[0]);
    else
      throw ConfigError("init mean has wrong dimension");
  }
  if (s.init.count == 0) throw ConfigError("init count must be positive");
  // Fail fast on inconsistent progeny.
  (void)progeny_from_params(s.params, s.bounds.L_max);
  return s;
}

std::string emit_scenario(const Scenario& s) {
  json j;
  j["family"] = family_name(s.family);
  j["d"] = s.dim;
  json params = json::object();
  for (const auto& [key, value] : s.params) params[key] = value;
  j["params"] = params;
  j["bounds"] = {{"M", s.bounds.M},
                 {"L", s.bounds.L},
                 {"gamma_bar", s.bounds.gamma_bar},
                 {"eps0", s.bounds.eps0},
                 {"L_max", s.bounds.L_max}};
  json init;
  init["kind"] = s.init.kind == InitialCondition::Kind::kPoint ? "point" : "gaussian";
  init["count"] = s.init.count;
  init["mean"] = s.init.mean;
  if (s.init.kind == InitialCondition::Kind::kGaussian)
    init["stddev"] = s.init.stddev;
  j["init"] = init;
  return j.dump(2);
}

}  // namespace mvlab

#include "mvlab/runconfig.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvlab/errors.hpp"

namespace mvlab {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown key '" + key + "' in " + where, key);
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"scenario", "grid", "seed", "out", "simulate", "reference",
                  "distance", "convergence", "check", "value"},
                 "config");
  RunConfig cfg;
  if (j.contains("scenario")) cfg.scenario = parse_scenario(j.at("scenario").dump());
  if (j.contains("grid")) {
    const auto& jg = j.at("grid");
    reject_unknown(jg, {"T", "dt"}, "grid");
    const double T = jg.contains("T") ? jg.at("T").get<double>() : 1.0;
    const double dt = jg.contains("dt") ? jg.at("dt").get<double>() : 1.0 / 64.0;
    cfg.grid = SimGrid(T, dt);
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();

  if (j.contains("simulate")) {
    const auto& js = j.at("simulate");
    reject_unknown(js, {"populations", "runs", "particle_cap"}, "simulate");
    if (js.contains("populations"))
      cfg.simulate.populations = js.at("populations").get<std::size_t>();
    if (js.contains("runs")) cfg.simulate.runs = js.at("runs").get<std::size_t>();
    if (js.contains("particle_cap"))
      cfg.simulate.particle_cap = js.at("particle_cap").get<std::size_t>();
  }
  if (j.contains("reference")) {
    const auto& jr = j.at("reference");
    reject_unknown(jr,
                   {"ensemble", "method", "picard_iterations",
                    "gap_coarsen_radius"},
                   "reference");
    if (jr.contains("ensemble"))
      cfg.reference.ensemble = jr.at("ensemble").get<std::size_t>();
    if (jr.contains("method")) {
      cfg.reference.method = jr.at("method").get<std::string>();
      if (cfg.reference.method != "self-interaction" &&
          cfg.reference.method != "picard")
        throw ConfigError("reference method must be 'self-interaction' or 'picard'",
                          "method");
    }
    if (jr.contains("picard_iterations"))
      cfg.reference.picard_iterations =
          jr.at("picard_iterations").get<std::size_t>();
    if (jr.contains("gap_coarsen_radius"))
      cfg.reference.gap_coarsen_radius =
          jr.at("gap_coarsen_radius").get<double>();
  }
  if (j.contains("distance")) {
    const auto& jd = j.at("distance");
    reject_unknown(jd, {"mu", "nu", "metric", "coarsen_radius", "witness"},
                   "distance");
    if (jd.contains("mu")) cfg.distance.mu_csv = jd.at("mu").get<std::string>();
    if (jd.contains("nu")) cfg.distance.nu_csv = jd.at("nu").get<std::string>();
    if (jd.contains("metric")) {
      cfg.distance.metric = jd.at("metric").get<std::string>();
      if (cfg.distance.metric != "bounded-lipschitz" &&
          cfg.distance.metric != "extended-w1")
        throw ConfigError(
            "distance metric must be 'bounded-lipschitz' or 'extended-w1'",
            "metric");
    }
    if (jd.contains("coarsen_radius"))
      cfg.distance.coarsen_radius = jd.at("coarsen_radius").get<double>();
    if (jd.contains("witness")) cfg.distance.witness = jd.at("witness").get<bool>();
  }
  if (j.contains("convergence")) {
    const auto& jc = j.at("convergence");
    reject_unknown(jc,
                   {"n_list", "replica_factor", "replica_cap",
                    "reference_ensemble", "reference_batches", "g"},
                   "convergence");
    if (jc.contains("n_list"))
      cfg.convergence.n_list = jc.at("n_list").get<std::vector<std::size_t>>();
    if (jc.contains("replica_factor"))
      cfg.convergence.replica_factor = jc.at("replica_factor").get<double>();
    if (jc.contains("replica_cap"))
      cfg.convergence.replica_cap = jc.at("replica_cap").get<std::size_t>();
    if (jc.contains("reference_ensemble"))
      cfg.convergence.reference_ensemble =
          jc.at("reference_ensemble").get<std::size_t>();
    if (jc.contains("reference_batches"))
      cfg.convergence.reference_batches =
          jc.at("reference_batches").get<std::size_t>();
    if (jc.contains("g")) cfg.convergence.g = jc.at("g").get<std::string>();
  }
  if (j.contains("check")) {
    const auto& jc = j.at("check");
    reject_unknown(jc,
                   {"scenarios", "ensemble_runs", "populations", "ito_replicas",
                    "lifted_ensemble", "sandwich_pairs"},
                   "check");
    if (jc.contains("scenarios"))
      cfg.check.scenarios = jc.at("scenarios").get<std::vector<std::string>>();
    if (jc.contains("ensemble_runs"))
      cfg.check.ensemble_runs = jc.at("ensemble_runs").get<std::size_t>();
    if (jc.contains("populations"))
      cfg.check.populations = jc.at("populations").get<std::size_t>();
    if (jc.contains("ito_replicas"))
      cfg.check.ito_replicas = jc.at("ito_replicas").get<std::size_t>();
    if (jc.contains("lifted_ensemble"))
      cfg.check.lifted_ensemble = jc.at("lifted_ensemble").get<std::size_t>();
    if (jc.contains("sandwich_pairs"))
      cfg.check.sandwich_pairs = jc.at("sandwich_pairs").get<std::size_t>();
  }
  if (j.contains("value")) {
    const auto& jv = j.at("value");
    reject_unknown(jv, {"times", "measure", "g", "ensemble", "restarts"}, "value");
    if (jv.contains("times"))
      cfg.value.times = jv.at("times").get<std::vector<double>>();
    if (jv.contains("measure"))
      cfg.value.measure_csv = jv.at("measure").get<std::string>();
    if (jv.contains("g")) cfg.value.g = jv.at("g").get<std::string>();
    if (jv.contains("ensemble"))
      cfg.value.ensemble = jv.at("ensemble").get<std::size_t>();
    if (jv.contains("restarts"))
      cfg.value.restarts = jv.at("restarts").get<std::size_t>();
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config(buf.str());
}

std::string canonical_emit(const RunConfig& cfg) {
  json j;
  j["scenario"] = json::parse(emit_scenario(cfg.scenario));
  j["grid"] = {{"T", cfg.grid.horizon}, {"dt", cfg.grid.dt}};
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir;
  j["simulate"] = {{"populations", cfg.simulate.populations},
                   {"runs", cfg.simulate.runs},
                   {"particle_cap", cfg.simulate.particle_cap}};
  j["reference"] = {{"ensemble", cfg.reference.ensemble},
                    {"method", cfg.reference.method},
                    {"picard_iterations", cfg.reference.picard_iterations},
                    {"gap_coarsen_radius", cfg.reference.gap_coarsen_radius}};
  j["distance"] = {{"mu", cfg.distance.mu_csv},
                   {"nu", cfg.distance.nu_csv},
                   {"metric", cfg.distance.metric},
                   {"coarsen_radius", cfg.distance.coarsen_radius},
                   {"witness", cfg.distance.witness}};
  j["convergence"] = {{"n_list", cfg.convergence.n_list},
                      {"replica_factor", cfg.convergence.replica_factor},
                      {"replica_cap", cfg.convergence.replica_cap},
                      {"reference_ensemble", cfg.convergence.reference_ensemble},
                      {"reference_batches", cfg.convergence.reference_batches},
                      {"g", cfg.convergence.g}};
  j["check"] = {{"scenarios", cfg.check.scenarios},
                {"ensemble_runs", cfg.check.ensemble_runs},
                {"populations", cfg.check.populations},
                {"ito_replicas", cfg.check.ito_replicas},
                {"lifted_ensemble", cfg.check.lifted_ensemble},
                {"sandwich_pairs", cfg.check.sandwich_pairs}};
  j["value"] = {{"times", cfg.value.times},
                {"measure", cfg.value.measure_csv},
                {"g", cfg.value.g},
                {"ensemble", cfg.value.ensemble},
                {"restarts", cfg.value.restarts}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig normalized = cfg;
  normalized.out_dir.clear();
  const std::string text = canonical_emit(normalized);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
  return canonical_emit(a) == canonical_emit(b);
}

}  // namespace mvlab

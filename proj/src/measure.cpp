#include "mvlab/measure.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/numeric.hpp"

namespace mvlab {

std::string Label::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < path_.size(); ++i) {
    if (i) out.push_back('.');
    out += std::to_string(path_[i]);
  }
  return out;
}

Label Label::from_string(const std::string& s) {
  std::vector<std::uint32_t> path;
  if (s.empty()) return Label();
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t dot = s.find('.', pos);
    const std::string tok = s.substr(pos, dot == std::string::npos ? dot : dot - pos);
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size() || v == 0)
      throw DomainError("invalid label digit '" + tok + "' in '" + s + "'");
    path.push_back(v);
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return Label(std::move(path));
}

bool Population::is_antichain() const {
  std::set<Label> seen;
  for (const auto& p : particles) {
    if (!seen.insert(p.label).second) return false;
  }
  for (const auto& a : particles)
    for (const auto& b : particles)
      if (a.label.is_ancestor_of(b.label)) return false;
  return true;
}

void PointMeasure::push_atom(std::vector<double> x, double w) {
  if (w < 0.0) throw DomainError("PointMeasure atom weight must be nonnegative");
  if (atoms_.empty() && dim_ == 0) dim_ = x.size();
  if (x.size() != dim_)
    throw ShapeError("atom dimension " + std::to_string(x.size()) +
                     " does not match measure dimension " + std::to_string(dim_));
  atoms_.push_back(Atom{std::move(x), w});
}

PointMeasure PointMeasure::aggregated() const {
  std::map<std::vector<double>, double> acc;
  for (const auto& a : atoms_) {
    if (a.weight != 0.0) acc[a.location] += a.weight;
  }
  PointMeasure out(dim_);
  out.reserve(acc.size());
  for (auto& [loc, w] : acc) out.push_atom(loc, w);
  return out;
}

double pair(const std::function<double(std::span<const double>)>& f,
            const PointMeasure& mu) {
  std::vector<double> terms(mu.size());
  const auto& atoms = mu.atoms();
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const double v = f(atoms[i].location);
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite test-function value at atom " << i << " (";
      for (std::size_t k = 0; k < atoms[i].location.size(); ++k)
        os << (k ? "," : "") << atoms[i].location[k];
      os << ")";
      throw EvaluationError(os.str());
    }
    terms[i] = atoms[i].weight * v;
  }
  return pairwise_sum(terms);
}

double mass(const PointMeasure& mu) {
  std::vector<double> w(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) w[i] = mu.atoms()[i].weight;
  return pairwise_sum(w);
}

double moment(const PointMeasure& mu, double p) {
  if (!(p >= 1.0)) throw DomainError("moment order must be >= 1");
  std::vector<double> terms(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const auto& a = mu.atoms()[i];
    terms[i] = a.weight * std::pow(euclid_norm(a.location), p);
  }
  return pairwise_sum(terms);
}

PointMeasure population_to_measure(std::span<const Population> pops, double scale) {
  if (!(scale > 0.0)) throw DomainError("scale must be positive");
  std::vector<const Particle*> all;
  std::size_t dim = 0;
  for (const auto& pop : pops)
    for (const auto& p : pop.particles) {
      all.push_back(&p);
      dim = p.position.size();
    }
  // Canonical atom order: pairings become independent of input order.
  std::sort(all.begin(), all.end(), [](const Particle* a, const Particle* b) {
    return a->position < b->position;
  });
  PointMeasure mu(dim);
  mu.reserve(all.size());
  for (const Particle* p : all) mu.push_atom(p->position, scale);
  return mu;
}

double population_distance(const Population& e1, const Population& e2) {
  std::map<Label, const Particle*> m1, m2;
  for (const auto& p : e1.particles) m1[p.label] = &p;
  for (const auto& p : e2.particles) m2[p.label] = &p;
  double dist = 0.0;
  std::size_t shared = 0;
  for (const auto& [label, p1] : m1) {
    auto it = m2.find(label);
    if (it == m2.end()) continue;
    ++shared;
    dist += std::min(euclid_dist(p1->position, it->second->position), 1.0);
  }
  dist += static_cast<double>(m1.size() - shared) +
          static_cast<double>(m2.size() - shared);
  return dist;
}

PointMeasure add_atom(const PointMeasure& mu, std::span<const double> x, double w) {
  if (!mu.empty() && x.size() != mu.dim())
    throw ShapeError("perturbation point dimension mismatch");
  PointMeasure out = mu;
  if (out.dim_ == 0) out.dim_ = x.size();
  if (w >= 0.0) {
    out.atoms_.push_back(
        PointMeasure::Atom{std::vector<double>(x.begin(), x.end()), w});
    return out;
  }
  // Negative perturbation: consume existing mass at exactly x.
  double remaining = -w;
  for (auto& a : out.atoms_) {
    if (remaining <= 0.0) break;
    if (!std::equal(a.location.begin(), a.location.end(), x.begin(), x.end()))
      continue;
    const double take = std::min(a.weight, remaining);
    a.weight -= take;
    remaining -= take;
  }
  if (remaining > 1e-12 * std::max(1.0, -w))
    throw InvalidPerturbationError(
        "negative perturbation exceeds the mass present at the target point");
  return out;
}

namespace {

void format_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  assert(ec == std::errc());
  out.append(buf, p);
}

}  // namespace

void write_measure_csv(std::ostream& os, const PointMeasure& mu) {
  std::string line;
  for (std::size_t k = 0; k < mu.dim(); ++k) {
    line += "x" + std::to_string(k + 1) + ",";
  }
  line += "weight\n";
  os << line;
  for (const auto& a : mu.atoms()) {
    line.clear();
    for (double c : a.location) {
      format_double(line, c);
      line.push_back(',');
    }
    format_double(line, a.weight);
    line.push_back('\n');
    os << line;
  }
}

void write_measure_csv(const std::string& path, const PointMeasure& mu,
                       const std::string& meta_comment) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  if (!meta_comment.empty()) os << "# " << meta_comment << "\n";
  write_measure_csv(os, mu);
}

PointMeasure read_measure_csv(std::istream& is) {
  std::string line;
  // Header (after optional comment lines).
  std::size_t dim = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t cols = 1;
    for (char c : line) cols += (c == ',');
    if (cols < 1 || line.substr(line.rfind(',') + 1) != "weight")
      throw Error("measure CSV header must end with 'weight', got: " + line);
    dim = cols - 1;
    break;
  }
  PointMeasure mu(dim);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> vals;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (p <= end) {
      double v = 0.0;
      auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc())
        throw Error("bad numeric field in measure CSV row: " + line);
      vals.push_back(v);
      if (q == end) break;
      if (*q != ',') throw Error("expected ',' in measure CSV row: " + line);
      p = q + 1;
    }
    if (vals.size() != dim + 1)
      throw ShapeError("measure CSV row has wrong number of fields: " + line);
    const double w = vals.back();
    vals.pop_back();
    mu.push_atom(std::move(vals), w);
  }
  return mu;
}

PointMeasure read_measure_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  return read_measure_csv(is);
}

}  // namespace mvlab

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mvlab/rng.hpp"

namespace mvlab {

// Ulam-Harris-Neveu genealogical label: a finite sequence of positive
// integers, empty for the root. Child i of k is the concatenation k·i.
class Label {
 public:
  Label() = default;
  explicit Label(std::vector<std::uint32_t> path) : path_(std::move(path)) {}

  const std::vector<std::uint32_t>& path() const { return path_; }
  bool is_root() const { return path_.empty(); }
  std::size_t depth() const { return path_.size(); }

  Label child(std::uint32_t i) const {
    std::vector<std::uint32_t> p = path_;
    p.push_back(i);
    return Label(std::move(p));
  }

  // Concatenation kk'; the root is the identity.
  Label concat(const Label& other) const {
    std::vector<std::uint32_t> p = path_;
    p.insert(p.end(), other.path_.begin(), other.path_.end());
    return Label(std::move(p));
  }

  // Strict-prefix ancestor relation k < k'.
  bool is_ancestor_of(const Label& other) const {
    if (path_.size() >= other.path_.size()) return false;
    for (std::size_t i = 0; i < path_.size(); ++i)
      if (path_[i] != other.path_[i]) return false;
    return true;
  }

  std::uint64_t hash() const { return hash_path(path_.data(), path_.size()); }

  // Dot-joined digits; the root serializes as the empty string.
  std::string to_string() const;
  static Label from_string(const std::string& s);

  friend bool operator==(const Label&, const Label&) = default;
  friend auto operator<=>(const Label& a, const Label& b) {
    return a.path_ <=> b.path_;
  }

 private:
  std::vector<std::uint32_t> path_;
};

struct Particle {
  Label label;
  std::vector<double> position;
  double birth_time = 0.0;
};

// A point of the state space E: a finite antichain of labeled particles.
struct Population {
  std::vector<Particle> particles;

  std::size_t size() const { return particles.size(); }

  // True iff all labels are distinct and none is an ancestor of another.
  bool is_antichain() const;
};

// Nonnegative finite measure on R^d stored as weighted atoms. Atoms are kept
// unaggregated: branching produces coincident offspring positions and
// aggregation must never change pairings. Zero-weight atoms are allowed.
class PointMeasure {
 public:
  struct Atom {
    std::vector<double> location;
    double weight = 0.0;
  };

  PointMeasure() = default;
  explicit PointMeasure(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }

  void reserve(std::size_t n) { atoms_.reserve(n); }

  // Appends a nonnegative atom. Throws DomainError on w < 0 or dimension
  // mismatch (the first atom fixes the dimension of an empty measure).
  void push_atom(std::vector<double> x, double w);

  // Drops zero-weight atoms and merges exact-duplicate locations. Pairings
  // are unchanged up to summation order.
  PointMeasure aggregated() const;

 private:
  std::size_t dim_ = 0;
  std::vector<Atom> atoms_;

  friend PointMeasure add_atom(const PointMeasure&, std::span<const double>, double);
};

// <f, mu> = sum_i w_i f(x_i). Throws EvaluationError identifying the first
// atom where f is non-finite.
double pair(const std::function<double(std::span<const double>)>& f,
            const PointMeasure& mu);

// Total mass sum_i w_i.
double mass(const PointMeasure& mu);

// p-th absolute moment sum_i w_i |x_i|^p, Euclidean norm; requires p >= 1.
double moment(const PointMeasure& mu, double p);

// One atom of weight `scale` per particle, over all populations. Atoms are
// sorted by location so that any reordering of the input yields bit-identical
// pairings. scale = 1/N for the empirical measure of an N-population system.
PointMeasure population_to_measure(std::span<const Population> pops, double scale);

// The metric d_E on E: sum over shared labels of (|x^k - y^k| ^ 1) plus the
// size of the label symmetric difference.
double population_distance(const Population& e1, const Population& e2);

// mu + w * delta_x. For w >= 0 appends an atom; for w < 0 subtracts |w| from
// atoms at exactly x (throws InvalidPerturbationError when the mass at x is
// insufficient). Every pairing changes by exactly w * f(x).
PointMeasure add_atom(const PointMeasure& mu, std::span<const double> x, double w);

// CSV with header `x1,...,xd,weight`, one atom per row, '.' decimal point,
// LF line endings. Lines starting with '#' are skipped on read.
void write_measure_csv(std::ostream& os, const PointMeasure& mu);
void write_measure_csv(const std::string& path, const PointMeasure& mu,
                       const std::string& meta_comment = {});
PointMeasure read_measure_csv(std::istream& is);
PointMeasure read_measure_csv(const std::string& path);

}  // namespace mvlab

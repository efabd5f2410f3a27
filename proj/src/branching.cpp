#include "mvlab/branching.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>

#include "mvlab/errors.hpp"
#include "mvlab/numeric.hpp"

namespace mvlab {

std::vector<Population> SystemView::make_populations() const {
  std::vector<Population> pops(population_count());
  for_each_particle([&](std::size_t pop, const Label& label,
                        std::span<const double> position, double birth) {
    pops[pop].particles.push_back(
        Particle{label, std::vector<double>(position.begin(), position.end()), birth});
  });
  return pops;
}

PointMeasure SystemView::make_measure(double scale) const {
  const auto pops = make_populations();
  return population_to_measure(pops, scale);
}

namespace {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct ParticleState {
  Label label;
  std::vector<double> pos;       // position at time tau
  std::vector<double> atom_pos;  // position currently entered in the pairings
  double birth = 0.0;
  double tau = 0.0;
  double next_candidate = kInfinity;
  RngStream jump_rng;
  RngStream diff_rng;
  bool alive = true;
};

struct Candidate {
  double time;
  std::size_t pop;
  std::size_t slot;
  bool operator>(const Candidate& o) const {
    if (time != o.time) return time > o.time;
    if (pop != o.pop) return pop > o.pop;
    return slot > o.slot;
  }
};

class Simulator : public SystemView {
 public:
  Simulator(const BranchingConfig& cfg, const CoefficientSet& coeffs,
            const InitialCondition& init, BranchingObserver& obs)
      : cfg_(cfg), coeffs_(coeffs), obs_(obs), d_(coeffs.dim),
        gamma_bar_(coeffs.bounds.gamma_bar),
        inv_n_(1.0 / static_cast<double>(cfg.populations)),
        pairings_(coeffs.interactions.size(), 0.0),
        b_buf_(d_), sigma_buf_(d_ * d_), noise_buf_(d_),
        progeny_buf_(coeffs.bounds.L_max + 1) {
    pops_.resize(cfg.populations);
    total_alive_ = 0;
    for (std::size_t i = 0; i < cfg.populations; ++i) {
      RngStream init_rng(cfg.seed, StreamTag::kInit, {cfg.run_id, i});
      Population pop = init.sample_population(init_rng);
      for (auto& particle : pop.particles) {
        if (particle.position.size() != d_)
          throw ShapeError("initial particle dimension mismatch");
        ParticleState st;
        st.label = particle.label;
        st.pos = particle.position;
        st.atom_pos = particle.position;
        st.birth = 0.0;
        st.tau = 0.0;
        attach_streams(st, i);
        st.next_candidate = draw_candidate(st, 0.0);
        pops_[i].push_back(std::move(st));
        ++total_alive_;
      }
    }
  }

  // SystemView
  std::size_t population_count() const override { return pops_.size(); }
  std::size_t total_particles() const override { return total_alive_; }
  void for_each_particle(
      const std::function<void(std::size_t, const Label&, std::span<const double>,
                               double)>& fn) const override {
    for (std::size_t i = 0; i < pops_.size(); ++i)
      for (const auto& p : pops_[i])
        if (p.alive) fn(i, p.label, p.pos, p.birth);
  }

  void run() {
    refresh_pairings();
    obs_.on_grid_point(0, 0.0, *this);
    for (std::size_t j = 0; j < cfg_.grid.steps; ++j) {
      const double t0 = cfg_.grid.time(j);
      const double t1 = cfg_.grid.time(j + 1);
      step_cell(t0, t1);
      compact();
      refresh_pairings();
      check_finite(t1);
      obs_.on_grid_point(j + 1, t1, *this);
    }
  }

 private:
  void attach_streams(ParticleState& st, std::size_t pop_index) {
    const std::uint64_t lh = st.label.hash();
    st.jump_rng = RngStream(cfg_.seed, StreamTag::kJump, {cfg_.run_id, pop_index, lh});
    st.diff_rng =
        RngStream(cfg_.seed, StreamTag::kDiffusion, {cfg_.run_id, pop_index, lh});
  }

  double draw_candidate(ParticleState& st, double from) {
    if (gamma_bar_ <= 0.0) return kInfinity;
    return from + st.jump_rng.exponential(gamma_bar_);
  }

  void refresh_pairings() {
    std::fill(pairings_.begin(), pairings_.end(), 0.0);
    for (auto& pop : pops_)
      for (auto& p : pop) {
        if (!p.alive) continue;
        p.atom_pos = p.pos;
        for (std::size_t k = 0; k < pairings_.size(); ++k)
          pairings_[k] += coeffs_.interactions[k].eval(p.atom_pos) * inv_n_;
      }
  }

  void pairings_remove(std::span<const double> x) {
    for (std::size_t k = 0; k < pairings_.size(); ++k)
      pairings_[k] -= coeffs_.interactions[k].eval(x) * inv_n_;
  }

  void pairings_add(std::span<const double> x, double count) {
    for (std::size_t k = 0; k < pairings_.size(); ++k)
      pairings_[k] += coeffs_.interactions[k].eval(x) * count * inv_n_;
  }

  // Euler-Maruyama sub-step from p.tau to `to`; coefficients frozen at the
  // segment-left state and the current pairings.
  void advance(ParticleState& p, double to) {
    const double h = to - p.tau;
    if (h <= 0.0) {
      p.tau = to;
      return;
    }
    coeffs_.drift(p.tau, p.pos, pairings_, b_buf_);
    coeffs_.diffusion(p.tau, p.pos, pairings_, sigma_buf_);
    const double sq = std::sqrt(h);
    for (std::size_t k = 0; k < d_; ++k) noise_buf_[k] = p.diff_rng.normal();
    for (std::size_t r = 0; r < d_; ++r) {
      double diff = 0.0;
      for (std::size_t k = 0; k < d_; ++k) diff += sigma_buf_[r * d_ + k] * noise_buf_[k];
      p.pos[r] += b_buf_[r] * h + sq * diff;
    }
    p.tau = to;
  }

  void step_cell(double t0, double t1) {
    (void)t0;
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<Candidate>> heap;
    for (std::size_t i = 0; i < pops_.size(); ++i)
      for (std::size_t s = 0; s < pops_[i].size(); ++s) {
        const auto& p = pops_[i][s];
        if (p.alive && p.next_candidate < t1)
          heap.push(Candidate{p.next_candidate, i, s});
      }
    while (!heap.empty()) {
      const Candidate c = heap.top();
      heap.pop();
      ParticleState& p = pops_[c.pop][c.slot];
      if (!p.alive) continue;
      advance(p, c.time);
      const double rate = coeffs_.death_rate(c.time, p.pos, pairings_);
      const double u = p.jump_rng.u01_halfopen();
      if (u < rate / gamma_bar_) {
        // Accepted: the particle dies and leaves `litter` children here.
        coeffs_.progeny(c.time, p.pos, pairings_, progeny_buf_);
        const OffspringPartition part =
            OffspringPartition::from_probabilities(progeny_buf_);
        const std::size_t litter =
            sample_progeny(p.jump_rng.u01_halfopen(), part);
        obs_.on_event(BranchEvent{c.time, c.pop, p.label, litter, p.pos});
        pairings_remove(p.atom_pos);
        p.alive = false;
        --total_alive_;
        const Label parent_label = p.label;
        const std::vector<double> birth_pos = p.pos;
        for (std::size_t ci = 1; ci <= litter; ++ci) {
          ParticleState child;
          child.label = parent_label.child(static_cast<std::uint32_t>(ci));
          child.pos = birth_pos;
          child.atom_pos = birth_pos;
          child.birth = c.time;
          child.tau = c.time;
          attach_streams(child, c.pop);
          child.next_candidate = draw_candidate(child, c.time);
          const std::size_t slot = pops_[c.pop].size();
          if (child.next_candidate < t1)
            heap.push(Candidate{child.next_candidate, c.pop, slot});
          pops_[c.pop].push_back(std::move(child));
          ++total_alive_;
        }
        pairings_add(birth_pos, static_cast<double>(litter));
        if (total_alive_ > cfg_.particle_cap)
          throw ExplosionError("population exceeded the particle cap at t=" +
                                   std::to_string(c.time),
                               c.time);
      } else {
        // Thinned: keep the advanced position, re-arm the clock.
        ParticleState& q = pops_[c.pop][c.slot];
        q.next_candidate = draw_candidate(q, c.time);
        if (q.next_candidate < t1)
          heap.push(Candidate{q.next_candidate, c.pop, c.slot});
      }
    }
    for (auto& pop : pops_)
      for (auto& p : pop)
        if (p.alive) advance(p, t1);
  }

  void compact() {
    for (auto& pop : pops_)
      std::erase_if(pop, [](const ParticleState& p) { return !p.alive; });
  }

  void check_finite(double t) const {
    for (const auto& pop : pops_)
      for (const auto& p : pop)
        for (double v : p.pos)
          if (!std::isfinite(v))
            throw NumericsError("non-finite particle position at t=" +
                                std::to_string(t));
  }

  const BranchingConfig& cfg_;
  const CoefficientSet& coeffs_;
  BranchingObserver& obs_;
  std::size_t d_;
  double gamma_bar_;
  double inv_n_;
  std::vector<std::vector<ParticleState>> pops_;
  std::size_t total_alive_ = 0;
  std::vector<double> pairings_;
  std::vector<double> b_buf_, sigma_buf_, noise_buf_, progeny_buf_;
};

class TrajectoryRecorder : public BranchingObserver {
 public:
  TrajectoryRecorder(BranchingTrajectory& out, double scale)
      : out_(out), scale_(scale) {}

  void on_grid_point(std::size_t, double, const SystemView& view) override {
    out_.population_log.push_back(view.make_populations());
    out_.measures.push_back(
        population_to_measure(out_.population_log.back(), scale_));
  }
  void on_event(const BranchEvent& event) override { out_.events.push_back(event); }

 private:
  BranchingTrajectory& out_;
  double scale_;
};

}  // namespace

void run_branching(const BranchingConfig& config, const CoefficientSet& coeffs,
                   const InitialCondition& init, BranchingObserver& observer) {
  if (config.populations == 0)
    throw DomainError("run_branching: need at least one population");
  Simulator sim(config, coeffs, init, observer);
  sim.run();
}

BranchingTrajectory simulate_branching(std::size_t populations,
                                       const CoefficientSet& coeffs,
                                       const InitialCondition& init,
                                       const SimGrid& grid, std::uint64_t seed,
                                       std::size_t particle_cap,
                                       std::uint64_t run_id) {
  BranchingTrajectory traj;
  traj.grid = grid;
  traj.populations = populations;
  BranchingConfig cfg;
  cfg.populations = populations;
  cfg.grid = grid;
  cfg.seed = seed;
  cfg.run_id = run_id;
  cfg.particle_cap = particle_cap;
  TrajectoryRecorder rec(traj, 1.0 / static_cast<double>(populations));
  run_branching(cfg, coeffs, init, rec);
  return traj;
}

MassStatistics mass_statistics_from_counts(
    const std::vector<std::vector<double>>& counts_by_traj, const SimGrid& grid) {
  if (counts_by_traj.empty())
    throw ShapeError("mass_statistics: empty ensemble");
  const std::size_t points = grid.points();
  for (const auto& row : counts_by_traj)
    if (row.size() != points)
      throw ShapeError("mass_statistics: trajectory grids do not match");
  MassStatistics out;
  out.ensemble_size = counts_by_traj.size();
  out.times.resize(points);
  out.mean.resize(points);
  out.variance.resize(points);
  out.stderr_.resize(points);
  std::vector<double> column(counts_by_traj.size());
  for (std::size_t j = 0; j < points; ++j) {
    out.times[j] = grid.time(j);
    for (std::size_t r = 0; r < counts_by_traj.size(); ++r)
      column[r] = counts_by_traj[r][j];
    const MeanStderr ms = mean_stderr(column);
    out.mean[j] = ms.mean;
    out.variance[j] = ms.stddev * ms.stddev;
    out.stderr_[j] = ms.stderr_;
  }
  return out;
}

MassStatistics mass_statistics(std::span<const BranchingTrajectory> ensemble) {
  if (ensemble.empty()) throw ShapeError("mass_statistics: empty ensemble");
  const SimGrid grid = ensemble.front().grid;
  std::vector<std::vector<double>> counts;
  counts.reserve(ensemble.size());
  for (const auto& traj : ensemble) {
    if (!(traj.grid == grid))
      throw ShapeError("mass_statistics: trajectory grids do not match");
    std::vector<double> row;
    row.reserve(traj.population_log.size());
    for (const auto& pops : traj.population_log) {
      std::size_t count = 0;
      for (const auto& pop : pops) count += pop.size();
      row.push_back(static_cast<double>(count));
    }
    counts.push_back(std::move(row));
  }
  return mass_statistics_from_counts(counts, grid);
}

namespace {

void format_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  out.append(buf, p);
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const BranchingTrajectory& traj) {
  std::string line = "time,";
  const std::size_t d =
      traj.measures.empty() ? 1 : std::max<std::size_t>(traj.measures[0].dim(), 1);
  for (std::size_t k = 0; k < d; ++k) line += "x" + std::to_string(k + 1) + ",";
  line += "weight\n";
  os << line;
  for (std::size_t j = 0; j < traj.measures.size(); ++j) {
    const double t = traj.grid.time(j);
    for (const auto& atom : traj.measures[j].atoms()) {
      line.clear();
      format_double(line, t);
      for (double c : atom.location) {
        line.push_back(',');
        format_double(line, c);
      }
      line.push_back(',');
      format_double(line, atom.weight);
      line.push_back('\n');
      os << line;
    }
  }
}

void write_events_csv(std::ostream& os, const BranchingTrajectory& traj) {
  os << "time,replica,parent_label,litter\n";
  std::string line;
  for (const auto& ev : traj.events) {
    line.clear();
    format_double(line, ev.time);
    line += "," + std::to_string(ev.replica) + "," + ev.parent.to_string() + "," +
            std::to_string(ev.litter) + "\n";
    os << line;
  }
}

}  // namespace mvlab

#pragma once

// Exact simulation of the stochastic coalescent and of the truncated chains
// (X^B, Lambda^B), by thinning against the majorant margin * phi(x) phi(y).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deterministic.hpp"
#include "errors.hpp"
#include "fenwick.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "measures.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "truncation.hpp"

namespace coagkit {

enum class EventKind { MergeIn, MergeLeak, SingleLeak };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::MergeIn: return "merge-in";
    case EventKind::MergeLeak: return "merge-leak";
    case EventKind::SingleLeak: return "single-leak";
  }
  return "";
}

/// m2 and m_out are 0 when they do not apply (single leaks have one
/// participant; leaked merges produce no particle in B).
struct Event {
  double t;
  EventKind kind;
  double m1, m2, m_out;
};

struct EventLog {
  std::vector<Event> events;
  std::size_t size() const noexcept { return events.size(); }
};

inline std::string event_log_csv(const EventLog& log) {
  io::CsvWriter w({"t", "kind", "m1", "m2", "m_out"});
  for (const auto& e : log.events) {
    w << e.t << to_string(e.kind) << e.m1 << e.m2 << e.m_out;
    w.endrow();
  }
  return w.str();
}

/// Initial particle configuration: one entry per particle.
struct ParticleSystem {
  std::vector<double> masses;

  static ParticleSystem monodisperse(std::size_t n, double mass = 1.0) {
    if (!(mass > 0)) throw InvalidArgument("particle mass must be positive");
    return {std::vector<double>(n, mass)};
  }
  /// Particles from a measure with integer weights (counts).
  static ParticleSystem from_counts(const DiscreteMeasure& mu) {
    ParticleSystem p;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const auto& a = mu.atoms()[i];
      const double c = std::round(a.weight);
      if (std::abs(a.weight - c) > 1e-9 || c < 0) throw InvalidArgument("particle counts must be integers", i);
      p.masses.insert(p.masses.end(), static_cast<std::size_t>(c), a.mass);
    }
    return p;
  }
  DiscreteMeasure to_measure(double eps = 0.0) const {
    std::vector<Atom> atoms;
    atoms.reserve(masses.size());
    for (double m : masses) atoms.push_back({m, 1.0});
    return DiscreteMeasure::make(atoms, eps);
  }
};

struct SimOptions {
  /// Snapshot times (raw chain time); empty means only t = 0 and t_end.
  std::vector<double> grid;
  bool record_events = false;
  double epsilon_mass = 0.0;
  /// Counter-based stream id; replicas use distinct streams.
  std::uint64_t stream = 0;
  /// When false the run only keeps the final state and counters.
  bool record_samples = true;
  /// Called at each snapshot with (t, measure, Lambda); lets callers
  /// compute statistics without storing every snapshot.
  std::function<void(double, const DiscreteMeasure&, double)> on_sample;
};

struct SimResult {
  std::vector<StateSample> samples;
  EventLog log;
  std::size_t events = 0;
  std::size_t proposals = 0;
  std::size_t merges = 0, leak_merges = 0, single_leaks = 0;
  double t_final = 0.0;
  std::vector<double> final_masses;
  double lambda_final = 0.0;
  double initial_total_mass = 0.0;
  double final_total_mass = 0.0;  // particles in B plus leaked mass
};

namespace detail {

/// Event engine shared by the plain and the truncated chain.
class CoalescentEngine {
 public:
  CoalescentEngine(const std::vector<double>& particles, const Kernel& k, const Truncation& b, double lambda0)
      : k_(k), b_(b), lambda_(lambda0) {
    const auto& phi = k.phi();
    mass_ = particles;
    phi_.resize(mass_.size());
    alive_ = mass_.size();
    for (std::size_t i = 0; i < mass_.size(); ++i) {
      if (!(mass_[i] > 0)) throw InvalidArgument("particle masses must be positive", i);
      phi_[i] = phi(mass_[i]);
      if (!(phi_[i] > 0)) throw InvalidArgument("dominating phi must be positive on particles", i);
    }
    rebuild();
  }

  double lambda() const noexcept { return lambda_; }
  std::size_t alive() const noexcept { return alive_; }

  std::vector<double> live_masses() const {
    std::vector<double> out;
    out.reserve(alive_);
    for (std::size_t i = 0; i < mass_.size(); ++i)
      if (phi_[i] > 0) out.push_back(mass_[i]);
    return out;
  }

  DiscreteMeasure measure(double eps) const {
    std::vector<Atom> atoms;
    atoms.reserve(alive_);
    for (std::size_t i = 0; i < mass_.size(); ++i)
      if (phi_[i] > 0) atoms.push_back({mass_[i], 1.0});
    return DiscreteMeasure::make(atoms, eps);
  }

  double phi_sum() const noexcept { return s1_; }

  /// Runs until t_end, calling snapshot(t) before the state changes past
  /// each grid time.
  template <class Snapshot, class OnEvent>
  void run(CounterRng& rng, double t_end, const std::vector<double>& grid, Snapshot&& snapshot, OnEvent&& on_event,
           SimResult& res) {
    std::size_t next = 0;
    double t = 0.0;
    const double margin = k_.margin();
    const auto& phi = k_.phi();
    for (;;) {
      const double pair_rate = alive_ >= 2 ? std::max(0.0, 0.5 * margin * (s1_ * s1_ - s2_)) : 0.0;
      const double leak_rate = lambda_ * s1_;
      const double rate = pair_rate + leak_rate;
      double t_next = std::numeric_limits<double>::infinity();
      if (rate > 0) t_next = t + rng.exponential(rate);
      while (next < grid.size() && grid[next] < t_next && grid[next] <= t_end) snapshot(grid[next++]);
      if (!(t_next <= t_end)) break;
      t = t_next;
      ++res.proposals;

      if (lambda_ > 0 && rng.uniform() * rate < leak_rate) {
        const std::size_t i = fen_.find(rng.uniform() * fen_.total());
        const double pi = phi_[i];
        const double before = s1_ + lambda_;
        remove(i);
        lambda_ += pi;
        check_phi_monotone(before, t);
        ++res.single_leaks;
        on_event(Event{t, EventKind::SingleLeak, mass_[i], 0.0, 0.0});
        after_event();
        continue;
      }

      std::size_t i, j;
      do {
        const double total = fen_.total();
        i = fen_.find(rng.uniform() * total);
        j = fen_.find(rng.uniform() * total);
      } while (i == j);
      const double kij = k_.eval_unchecked(mass_[i], mass_[j]);
      const double acc = kij / (margin * phi_[i] * phi_[j]);
      if (acc > 1.0 + 1e-12)
        throw InvariantViolation("domination", "K(" + io::format_double(mass_[i]) + ", " + io::format_double(mass_[j]) +
                                                   ") exceeds margin * phi * phi (ratio " + io::format_double(acc) + ")");
      if (!(rng.uniform() < acc)) continue;

      const double mi = mass_[i], mj = mass_[j];
      const double s = mi + mj;
      const double before = s1_ + lambda_;
      if (b_.contains(s)) {
        remove(j);
        const double ps = phi(s);
        mass_[i] = s;
        update(i, ps);
        ++res.merges;
        on_event(Event{t, EventKind::MergeIn, mi, mj, s});
      } else {
        remove(i);
        remove(j);
        lambda_ += phi(s);
        ++res.leak_merges;
        on_event(Event{t, EventKind::MergeLeak, mi, mj, s});
      }
      check_phi_monotone(before, t);
      after_event();
    }
    while (next < grid.size() && grid[next] <= t_end) snapshot(grid[next++]);
    res.t_final = t;
  }

 private:
  void update(std::size_t i, double p) {
    s1_ += p - phi_[i];
    s2_ += p * p - phi_[i] * phi_[i];
    phi_[i] = p;
    fen_.set(i, p);
  }
  void remove(std::size_t i) {
    update(i, 0.0);
    --alive_;
  }
  void rebuild() {
    CompensatedSum a, b;
    for (double p : phi_) {
      a += p;
      b += p * p;
    }
    s1_ = a.value();
    s2_ = b.value();
    fen_.assign(phi_);
  }
  void after_event() {
    if (++since_rebuild_ < 1024) return;
    since_rebuild_ = 0;
    const double s1 = s1_, s2 = s2_;
    rebuild();
    const double scale = std::max(1.0, s1_);
    if (std::abs(s1 - s1_) > 1e-9 * scale || std::abs(s2 - s2_) > 1e-9 * std::max(1.0, s2_))
      throw InvariantViolation("cache-coherence", "incremental phi sums drifted from recomputed values");
  }
  void check_phi_monotone(double before, double t) const {
    const double after = s1_ + lambda_;
    if (after > before + 1e-9 * std::max(1.0, before))
      throw InvariantViolation("phi-monotone", "<phi, X> + Lambda increased at t=" + io::format_double(t));
  }

  const Kernel& k_;
  Truncation b_;
  double lambda_;
  std::vector<double> mass_;
  std::vector<double> phi_;
  Fenwick fen_;
  std::size_t alive_ = 0;
  double s1_ = 0.0, s2_ = 0.0;
  std::size_t since_rebuild_ = 0;
};

inline std::vector<double> sim_grid(double t_end, const SimOptions& opt) {
  if (!(t_end >= 0) || !std::isfinite(t_end)) throw InvalidArgument("t_end must be finite and >= 0");
  std::vector<double> g = opt.grid;
  if (g.empty()) g = {0.0, t_end};
  for (std::size_t i = 1; i < g.size(); ++i)
    if (!(g[i] > g[i - 1])) throw InvalidArgument("snapshot grid must be strictly increasing", i);
  return g;
}

inline SimResult simulate_impl(const ParticleSystem& x0, const Kernel& k, const Truncation& b, double t_end,
                               std::uint64_t seed, const SimOptions& opt) {
  const auto& phi = k.phi();
  std::vector<double> inside;
  double lambda0 = 0.0;
  SimResult res;
  for (std::size_t i = 0; i < x0.masses.size(); ++i) {
    const double m = x0.masses[i];
    if (!(m > 0) || !std::isfinite(m)) throw InvalidArgument("particle masses must be positive", i);
    res.initial_total_mass += m;
    if (b.contains(m)) inside.push_back(m);
    else lambda0 += phi(m);
  }
  CoalescentEngine eng(inside, k, b, lambda0);
  CounterRng rng(seed, opt.stream);
  const auto grid = sim_grid(t_end, opt);
  auto snapshot = [&](double t) {
    if (!opt.record_samples && !opt.on_sample) return;
    auto mu = eng.measure(opt.epsilon_mass);
    if (opt.on_sample) opt.on_sample(t, mu, eng.lambda());
    if (opt.record_samples) res.samples.push_back({t, std::move(mu), eng.lambda()});
  };
  double leaked_mass = 0.0;
  for (std::size_t i = 0; i < x0.masses.size(); ++i)
    if (!b.contains(x0.masses[i])) leaked_mass += x0.masses[i];
  double last_t = -1.0;
  auto on_event = [&](const Event& e) {
    if (!(e.t > last_t)) throw InvariantViolation("event-order", "event times must strictly increase");
    last_t = e.t;
    ++res.events;
    if (e.kind == EventKind::MergeLeak) leaked_mass += e.m_out;
    if (e.kind == EventKind::SingleLeak) leaked_mass += e.m1;
    if (opt.record_events) res.log.events.push_back(e);
  };
  eng.run(rng, t_end, grid, snapshot, on_event, res);
  res.final_masses = eng.live_masses();
  res.lambda_final = eng.lambda();
  double m = leaked_mass;
  for (double x : res.final_masses) m += x;
  res.final_total_mass = m;
  return res;
}

} // namespace detail

/// Marcus-Lushnikov coalescent: every pair merges at rate K.
inline SimResult simulate_coalescent(const ParticleSystem& x0, const Kernel& k, double t_end, std::uint64_t seed,
                                     const SimOptions& opt = {}) {
  return detail::simulate_impl(x0, k, Truncation::all(), t_end, seed, opt);
}

/// The chain (X^B, Lambda^B) started from X^B_0 = 1_B X0 and
/// Lambda^B_0 = <phi 1_{B^c}, X0>.
inline SimResult simulate_coupled(const ParticleSystem& x0, const Kernel& k, const Truncation& b, double t_end,
                                  std::uint64_t seed, const SimOptions& opt = {}) {
  return detail::simulate_impl(x0, k, b, t_end, seed, opt);
}

// ---------------------------------------------------------------------------
// Coupled family over nested truncations with shared clocks
// ---------------------------------------------------------------------------

struct CoupledPath {
  Truncation b;
  std::vector<StateSample> samples;
  EventLog log;
};

struct FamilyResult {
  std::vector<CoupledPath> paths;
  std::size_t rounds = 0;
  std::size_t checks = 0;
  /// min over checks of (<phi,X^B> + Lambda^B) - (<phi,X^B'> + Lambda^B'), B in B'
  double min_order_gap = std::numeric_limits<double>::infinity();
};

/// One realisation of the coupling of the chains for every B in `bs`
/// (nested, ascending). Per round the pair clocks T_ij ~ Exp(K), the
/// clocks S_ij ~ Exp(phi_i phi_j - K) and the B-increasing family
/// S^B_i = E_i / (phi_i nu^B) are drawn from counter-addressed uniforms
/// keyed by (seed, round, clock, i, j); the first clock to ring is applied
/// to every system and the construction restarts. The ordering
/// X^B <= X^B' and <phi,X^B> + Lambda^B >= <phi,X^B'> + Lambda^B' is checked
/// after every round and a violation throws InvariantViolation.
inline FamilyResult simulate_coupled_family(const ParticleSystem& x0, const Kernel& k, const std::vector<Truncation>& bs,
                                            double t_end, std::uint64_t seed, const SimOptions& opt = {}) {
  if (bs.empty()) throw InvalidArgument("truncation list must be non-empty");
  for (std::size_t i = 1; i < bs.size(); ++i)
    if (!bs[i - 1].subset_of(bs[i])) throw InvalidArgument("truncation list must be nested", i);
  if (k.margin() != 1.0)
    throw InvalidArgument("the coupled family needs K <= phi phi with margin 1; this kernel declares margin " +
                          io::format_double(k.margin()));
  const auto& phi = k.phi();
  const std::size_t levels = bs.size();
  const auto grid = detail::sim_grid(t_end, opt);

  // Particles of the largest system; level[p] = first system containing p.
  struct Particle {
    double mass;
    double phi;
    std::size_t level;
  };
  std::vector<Particle> ps;
  std::vector<double> lambda(levels, 0.0);
  for (std::size_t i = 0; i < x0.masses.size(); ++i) {
    const double m = x0.masses[i];
    if (!(m > 0) || !std::isfinite(m)) throw InvalidArgument("particle masses must be positive", i);
    std::size_t lv = levels;
    for (std::size_t l = 0; l < levels; ++l)
      if (bs[l].contains(m)) {
        lv = l;
        break;
      }
    for (std::size_t l = 0; l < lv; ++l) lambda[l] += phi(m);
    if (lv < levels) ps.push_back({m, phi(m), lv});
  }

  FamilyResult res;
  for (const auto& b : bs) res.paths.push_back({b, {}, {}});

  auto system_measure = [&](std::size_t l) {
    std::vector<Atom> atoms;
    for (const auto& p : ps)
      if (p.level <= l) atoms.push_back({p.mass, 1.0});
    return DiscreteMeasure::make(atoms, opt.epsilon_mass);
  };
  auto phi_total = [&](std::size_t l) {
    CompensatedSum s;
    for (const auto& p : ps)
      if (p.level <= l) s += p.phi;
    return s.value() + lambda[l];
  };
  std::vector<double> last_total(levels);
  for (std::size_t l = 0; l < levels; ++l) last_total[l] = phi_total(l);

  auto verify = [&](double t) {
    std::vector<DiscreteMeasure> ms;
    for (std::size_t l = 0; l < levels; ++l) {
      ms.push_back(system_measure(l));
      for (const auto& a : ms.back().atoms())
        if (!bs[l].contains(a.mass))
          throw InvariantViolation("coupling-support", "system " + std::to_string(l) + " holds a mass outside B");
      const double tot = phi_total(l);
      if (tot > last_total[l] + 1e-9 * std::max(1.0, last_total[l]))
        throw InvariantViolation("phi-monotone", "<phi, X^B> + Lambda^B increased at t=" + io::format_double(t));
      last_total[l] = tot;
    }
    for (std::size_t l = 1; l < levels; ++l) {
      for (const auto& a : ms[l - 1].atoms())
        if (a.weight > ms[l].weight_at(a.mass))
          throw InvariantViolation("coupling-order", "X^B <= X^B' fails at mass " + io::format_double(a.mass) +
                                                         ", t=" + io::format_double(t));
      const double gap = phi_total(l - 1) - phi_total(l);
      res.min_order_gap = std::min(res.min_order_gap, gap);
      if (gap < -1e-9 * std::max(1.0, phi_total(l)))
        throw InvariantViolation("coupling-order", "phi-ordering fails at t=" + io::format_double(t));
      ++res.checks;
    }
  };
  auto snapshot = [&](double t) {
    for (std::size_t l = 0; l < levels; ++l) {
      auto mu = system_measure(l);
      if (opt.on_sample) opt.on_sample(t, mu, lambda[l]);
      if (opt.record_samples) res.paths[l].samples.push_back({t, std::move(mu), lambda[l]});
    }
  };
  auto log = [&](std::size_t l, const Event& e) {
    if (opt.record_events) res.paths[l].log.events.push_back(e);
  };

  enum Tag : std::uint32_t { PairT = 1, PairS = 2, Single = 3 };
  std::size_t next = 0;
  double t = 0.0;
  verify(0.0);
  for (std::uint32_t round = 0;; ++round) {
    const std::size_t m = ps.size();
    // nu^B = Lambda^B - sum of phi over particles of the largest system
    // that are not in B.
    std::vector<double> nu(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      double outside = 0.0;
      for (const auto& p : ps)
        if (p.level > l) outside += p.phi;
      nu[l] = lambda[l] - outside;
      if (nu[l] < -1e-9 * std::max(1.0, lambda[l])) throw InvariantViolation("coupling-order", "nu^B is negative");
      nu[l] = std::max(0.0, nu[l]);
    }

    // The first clock to ring among those relevant to some system.
    enum class Kind { None, T, S, Single } kind = Kind::None;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    auto clock = [&](std::uint32_t tag, std::size_t i, std::size_t j, double rate) {
      if (!(rate > 0)) return std::numeric_limits<double>::infinity();
      return -std::log(uniform_at(seed, round, tag, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j))) / rate;
    };
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        const double kij = k.eval_unchecked(ps[i].mass, ps[j].mass);
        if (i < j) {
          const double c = clock(PairT, i, j, kij);
          if (c < best) best = c, kind = Kind::T, bi = i, bj = j;
        }
        // S_ij only matters for systems containing i but not j.
        if (ps[i].level < ps[j].level) {
          const double slack = ps[i].phi * ps[j].phi - kij;
          if (slack < -1e-12 * ps[i].phi * ps[j].phi)
            throw InvariantViolation("domination", "K exceeds phi phi at a particle pair");
          const double c = clock(PairS, i, j, std::max(0.0, slack));
          if (c < best) best = c, kind = Kind::S, bi = i, bj = j;
        }
      }
      // S^B_i is smallest for the first system containing i.
      const double c = clock(Single, i, 0, ps[i].phi * nu[ps[i].level]);
      if (c < best) best = c, kind = Kind::Single, bi = i, bj = 0;
    }

    const double t_next = t + best;
    while (next < grid.size() && grid[next] < t_next && grid[next] <= t_end) snapshot(grid[next++]);
    if (kind == Kind::None || !(t_next <= t_end)) break;
    t = t_next;
    ++res.rounds;

    std::vector<bool> erase(m, false);
    if (kind == Kind::T) {
      auto& a = ps[bi];
      auto& b = ps[bj];
      const std::size_t lo = std::min(a.level, b.level), hi = std::max(a.level, b.level);
      const std::size_t loner = a.level < b.level ? bi : bj;
      // Systems containing exactly one of the two lose it to Lambda.
      for (std::size_t l = lo; l < hi; ++l) {
        lambda[l] += ps[loner].phi;
        log(l, Event{t, EventKind::SingleLeak, ps[loner].mass, 0.0, 0.0});
      }
      const double s = a.mass + b.mass;
      std::size_t new_level = levels;
      for (std::size_t l = hi; l < levels; ++l) {
        if (bs[l].contains(s)) {
          if (new_level == levels) new_level = l;
          log(l, Event{t, EventKind::MergeIn, a.mass, b.mass, s});
        } else {
          lambda[l] += phi(s);
          log(l, Event{t, EventKind::MergeLeak, a.mass, b.mass, s});
        }
      }
      if (new_level < levels) {
        a = {s, phi(s), new_level};
        erase[bj] = true;
      } else {
        erase[bi] = erase[bj] = true;
      }
    } else if (kind == Kind::S) {
      auto& a = ps[bi];
      const std::size_t to = ps[bj].level;
      for (std::size_t l = a.level; l < to; ++l) {
        lambda[l] += a.phi;
        log(l, Event{t, EventKind::SingleLeak, a.mass, 0.0, 0.0});
      }
      a.level = to;
    } else {
      auto& a = ps[bi];
      // Every system whose S^B_i coincides with the ringing clock fires.
      std::size_t l = a.level;
      const double e = nu[a.level];
      while (l < levels && std::abs(nu[l] - e) <= 1e-12 * std::max(1.0, e)) {
        lambda[l] += a.phi;
        log(l, Event{t, EventKind::SingleLeak, a.mass, 0.0, 0.0});
        ++l;
      }
      if (l == levels) erase[bi] = true;
      else a.level = l;
    }
    std::vector<Particle> kept;
    kept.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
      if (!erase[i]) kept.push_back(ps[i]);
    ps.swap(kept);
    verify(t);
  }
  while (next < grid.size() && grid[next] <= t_end) snapshot(grid[next++]);
  return res;
}

// ---------------------------------------------------------------------------
// Rescaling and martingale drift
// ---------------------------------------------------------------------------

/// X~^n_t = n^-1 X^n_{t/n}: times multiplied by n, weights and Lambda
/// divided by n.
inline std::vector<StateSample> rescale_path(const std::vector<StateSample>& path, double n) {
  if (!(n >= 1)) throw InvalidArgument("rescaling factor must be >= 1");
  std::vector<StateSample> out;
  out.reserve(path.size());
  for (const auto& s : path) {
    std::vector<Atom> atoms = s.mu.atoms();
    for (auto& a : atoms) a.weight /= n;
    out.push_back({s.t * n, DiscreteMeasure::make(atoms, s.mu.epsilon()), s.lambda / n});
  }
  return out;
}

inline EventLog rescale_events(const EventLog& log, double n) {
  if (!(n >= 1)) throw InvalidArgument("rescaling factor must be >= 1");
  EventLog out = log;
  for (auto& e : out.events) e.t *= n;
  return out;
}

/// mu^(n)(A x A') = mu(A) mu(A') - n^-1 mu(A n A') for predicates A, A'.
template <class PredA, class PredB>
double pair_measure(const DiscreteMeasure& mu, double n, PredA&& in_a, PredB&& in_b) {
  CompensatedSum a, b, ab;
  for (const auto& x : mu.atoms()) {
    const bool ia = in_a(x.mass), ib = in_b(x.mass);
    if (ia) a += x.weight;
    if (ib) b += x.weight;
    if (ia && ib) ab += x.weight;
  }
  return a.value() * b.value() - ab.value() / n;
}

/// <(f, a), L^{B,(1)}(mu, lambda)> for an integer-valued measure mu: the
/// exact drift of the truncated chain. With B = all and lambda = 0 this is
/// the drift of the plain coalescent.
template <class F>
double drift_L1(const DiscreteMeasure& mu, double lambda, const Kernel& k, const Truncation& b, F&& f, double a = 0.0) {
  const auto& at = mu.atoms();
  const auto& phi = k.phi();
  CompensatedSum s;
  for (std::size_t i = 0; i < at.size(); ++i) {
    for (std::size_t j = 0; j < at.size(); ++j) {
      const double x = at[i].mass, y = at[j].mass;
      // mu^(1)({x} x {y}): ordered pairs of distinct particles.
      const double w = at[i].weight * at[j].weight - (i == j ? at[i].weight : 0.0);
      if (w == 0.0) continue;
      const double kxy = k.eval_unchecked(x, y);
      if (kxy == 0.0) continue;
      const double sum = x + y;
      const double gain = b.contains(sum) ? f(sum) : a * phi(sum);
      s += 0.5 * (gain - f(x) - f(y)) * kxy * w;
    }
  }
  if (lambda != 0.0)
    for (const auto& x : at) s += lambda * (a * phi(x.mass) - f(x.mass)) * phi(x.mass) * x.weight;
  return s.value();
}

/// Q^{B,(1)}: the previsible increasing-process density (squared jumps).
template <class F>
double quadratic_Q1(const DiscreteMeasure& mu, double lambda, const Kernel& k, const Truncation& b, F&& f,
                    double a = 0.0) {
  const auto& at = mu.atoms();
  const auto& phi = k.phi();
  CompensatedSum s;
  for (std::size_t i = 0; i < at.size(); ++i) {
    for (std::size_t j = 0; j < at.size(); ++j) {
      const double x = at[i].mass, y = at[j].mass;
      const double w = at[i].weight * at[j].weight - (i == j ? at[i].weight : 0.0);
      if (w == 0.0) continue;
      const double kxy = k.eval_unchecked(x, y);
      if (kxy == 0.0) continue;
      const double sum = x + y;
      const double jump = (b.contains(sum) ? f(sum) : a * phi(sum)) - f(x) - f(y);
      s += 0.5 * jump * jump * kxy * w;
    }
  }
  if (lambda != 0.0)
    for (const auto& x : at) {
      const double jump = a * phi(x.mass) - f(x.mass);
      s += lambda * jump * jump * phi(x.mass) * x.weight;
    }
  return s.value();
}

struct DriftCheck {
  double estimate = 0.0;
  double exact = 0.0;
  double stderr_ = 0.0;
  double z = 0.0;
  double dt = 0.0;
  std::size_t reps = 0;
};

/// Monte-Carlo estimate of E[<f, X_dt> - <f, X_0>] / dt for the plain
/// coalescent against the exact drift from mu^(1). dt <= 0 selects
/// 1e-3 / (total majorant rate).
template <class F>
DriftCheck generator_consistency(const Kernel& k, const ParticleSystem& x0, F&& f, std::size_t reps, double dt,
                                 std::uint64_t seed) {
  if (reps < 2) throw InvalidArgument("generator_consistency needs at least 2 replicas");
  const auto mu = x0.to_measure();
  DriftCheck out;
  out.reps = reps;
  out.exact = drift_L1(mu, 0.0, k, Truncation::all(), f);
  if (dt <= 0) {
    double s1 = 0, s2 = 0;
    for (double m : x0.masses) {
      const double p = k.phi()(m);
      s1 += p;
      s2 += p * p;
    }
    const double r = 0.5 * k.margin() * (s1 * s1 - s2);
    dt = r > 0 ? 1e-3 / r : 1.0;
  }
  out.dt = dt;
  double f0 = 0.0;
  for (double m : x0.masses) f0 += f(m);
  CompensatedSum sum, sum2;
  SimOptions opt;
  opt.record_samples = false;
  for (std::size_t r = 0; r < reps; ++r) {
    opt.stream = r;
    const auto res = simulate_coalescent(x0, k, dt, seed, opt);
    double f1 = 0.0;
    for (double m : res.final_masses) f1 += f(m);
    const double inc = (f1 - f0) / dt;
    sum += inc;
    sum2 += inc * inc;
  }
  const double n = static_cast<double>(reps);
  out.estimate = sum.value() / n;
  const double var = std::max(0.0, (sum2.value() - n * out.estimate * out.estimate) / (n - 1));
  out.stderr_ = std::sqrt(var / n);
  if (out.stderr_ > 0) out.z = (out.estimate - out.exact) / out.stderr_;
  else out.z = out.estimate == out.exact ? 0.0 : std::numeric_limits<double>::infinity();
  return out;
}

} // namespace coagkit

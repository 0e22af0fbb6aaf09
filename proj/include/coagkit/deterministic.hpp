#pragma once

// Truncated Smoluchowski system on a compact mass set B:
//   d/dt (mu, lambda) = L^B(mu, lambda)
// where pair merges leaving B and phi-weighted decay of every atom are
// routed into the scalar tracker lambda.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "measures.hpp"
#include "numeric.hpp"
#include "ode.hpp"
#include "truncation.hpp"

namespace coagkit {

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace detail {
// Sorts signed (mass, rate) entries and sums entries within eps.
inline std::vector<Atom> merge_signed(std::vector<Atom> v, double eps) {
  std::sort(v.begin(), v.end(), [](const Atom& a, const Atom& b) { return a.mass < b.mass; });
  std::vector<Atom> out;
  for (const auto& a : v) {
    if (!out.empty() && a.mass - out.back().mass <= eps) out.back().weight += a.weight;
    else out.push_back(a);
  }
  return out;
}
} // namespace detail

/// L(mu) as a signed atom list (mass, rate of change), sorted by mass.
inline std::vector<Atom> apply_L(const DiscreteMeasure& mu, const Kernel& k) {
  const auto& a = mu.atoms();
  std::vector<Atom> out;
  for (const auto& x : a) out.push_back({x.mass, 0.0});
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i; j < a.size(); ++j) {
      const double kij = k.eval_unchecked(a[i].mass, a[j].mass);
      if (kij == 0.0) continue;
      const double r = kij * a[i].weight * a[j].weight;
      if (i == j) {
        out[i].weight -= r;
        out.push_back({2 * a[i].mass, 0.5 * r});
      } else {
        out[i].weight -= r;
        out[j].weight -= r;
        out.push_back({a[i].mass + a[j].mass, r});
      }
    }
  }
  return detail::merge_signed(std::move(out), mu.epsilon());
}

struct TruncatedRate {
  std::vector<Atom> dmu;
  double dlambda = 0.0;
};

/// L^B(mu, lambda). `mu` must be supported in B.
inline TruncatedRate apply_LB(const DiscreteMeasure& mu, double lambda, const Kernel& k, const SublinearFn& phi,
                              const Truncation& b) {
  const auto& a = mu.atoms();
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!b.contains(a[i].mass)) throw InvalidArgument("state atom lies outside the truncation set", i);
  TruncatedRate out;
  CompensatedSum dl;
  for (const auto& x : a) {
    const double p = phi(x.mass);
    out.dmu.push_back({x.mass, -lambda * p * x.weight});
    dl += lambda * p * p * x.weight;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i; j < a.size(); ++j) {
      const double kij = k.eval_unchecked(a[i].mass, a[j].mass);
      if (kij == 0.0) continue;
      const double r = kij * a[i].weight * a[j].weight;
      const double s = a[i].mass + a[j].mass;
      const double gain = i == j ? 0.5 * r : r;
      out.dmu[i].weight -= r;
      if (i != j) out.dmu[j].weight -= r;
      if (b.contains(s)) out.dmu.push_back({s, gain});
      else dl += phi(s) * gain;
    }
  }
  out.dmu = detail::merge_signed(std::move(out.dmu), mu.epsilon());
  out.dlambda = dl.value();
  return out;
}

/// Guaranteed strong-solution horizon 1 / <phi^2, mu0> (infinite for a
/// zero measure).
inline double blowup_horizon(const DiscreteMeasure& mu0, const SublinearFn& phi) {
  const double m2 = moment(mu0, [&](double x) { const double p = phi(x); return p * p; });
  return m2 > 0 ? 1.0 / m2 : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// The closed finite system on the reachable support
// ---------------------------------------------------------------------------

/// The truncated system restricted to the atoms reachable from supp(mu0)
/// inside B. State vector: atom weights followed by lambda.
class TruncatedSystem {
 public:
  struct Pair {
    std::uint32_t i, j;
    std::int32_t target;  // -1: the merge leaves B
    double k;
    double phi_out;
  };

  TruncatedSystem(const DiscreteMeasure& mu0, const Kernel& k, const SublinearFn& phi, const Truncation& b, double eps,
                  std::size_t max_atoms = 20000)
      : b_(b), eps_(eps) {
    if (b.is_all()) throw InvalidArgument("the deterministic solver needs a compact truncation set");
    CompensatedSum leaked;
    std::vector<double> init;
    for (const auto& a : mu0.atoms()) {
      if (b.contains(a.mass)) {
        init.push_back(a.mass);
      } else {
        leaked += phi(a.mass) * a.weight;
      }
    }
    lambda0_ = leaked.value();

    // Closure of the initial support under pair sums that stay in B and
    // have positive rate.
    std::set<double> atoms;
    auto near = [&](double x) {
      auto it = atoms.lower_bound(x - eps_);
      return it != atoms.end() && std::abs(*it - x) <= eps_;
    };
    std::vector<double> work;
    auto insert = [&](double x) {
      if (near(x)) return;
      atoms.insert(x);
      work.push_back(x);
      if (atoms.size() > max_atoms)
        throw NumericalFailure("support closure exceeds " + std::to_string(max_atoms) +
                               " atoms; use a coarser epsilon_mass or a smaller truncation set");
    };
    for (double x : init) insert(x);
    while (!work.empty()) {
      const double x = work.back();
      work.pop_back();
      for (auto it = atoms.begin(); it != atoms.end(); ++it) {
        const double s = x + *it;
        if (!b.contains(s) || k.eval_unchecked(x, *it) == 0.0) continue;
        insert(s);
      }
    }
    masses_.assign(atoms.begin(), atoms.end());
    auto find = [&](double x) -> std::int64_t {
      auto it = std::lower_bound(masses_.begin(), masses_.end(), x - eps_);
      if (it != masses_.end() && std::abs(*it - x) <= eps_) return it - masses_.begin();
      return -1;
    };
    for (double x : masses_) phi_.push_back(phi(x));
    for (std::size_t i = 0; i < masses_.size(); ++i) {
      for (std::size_t j = i; j < masses_.size(); ++j) {
        const double kij = k.eval_unchecked(masses_[i], masses_[j]);
        if (kij == 0.0) continue;
        const double s = masses_[i] + masses_[j];
        Pair p{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), -1, kij, 0.0};
        if (b.contains(s)) {
          const auto t = find(s);
          if (t < 0) throw NumericalFailure("support closure is not closed under merges");
          p.target = static_cast<std::int32_t>(t);
        } else {
          p.phi_out = phi(s);
        }
        pairs_.push_back(p);
        k_max_ = std::max(k_max_, kij);
      }
    }
    phi_max_ = phi_.empty() ? 0.0 : *std::max_element(phi_.begin(), phi_.end());

    y0_.assign(masses_.size() + 1, 0.0);
    for (const auto& a : mu0.atoms()) {
      if (!b.contains(a.mass)) continue;
      y0_[static_cast<std::size_t>(find(a.mass))] += a.weight;
    }
    y0_.back() = lambda0_;
  }

  std::size_t size() const noexcept { return masses_.size(); }
  const std::vector<double>& masses() const noexcept { return masses_; }
  const std::vector<double>& phi_values() const noexcept { return phi_; }
  const std::vector<Pair>& pairs() const noexcept { return pairs_; }
  const std::vector<double>& initial_state() const noexcept { return y0_; }
  double lambda0() const noexcept { return lambda0_; }
  double k_max() const noexcept { return k_max_; }
  double phi_max() const noexcept { return phi_max_; }
  double epsilon() const noexcept { return eps_; }
  const Truncation& truncation() const noexcept { return b_; }

  /// dy = L^B(y); dy must be zero-initialised.
  void rhs(const std::vector<double>& y, std::vector<double>& dy) const {
    const std::size_t n = masses_.size();
    const double lam = y[n];
    double dl = 0.0;
    for (const auto& p : pairs_) {
      const double r = p.k * y[p.i] * y[p.j];
      double gain;
      if (p.i == p.j) {
        dy[p.i] -= r;
        gain = 0.5 * r;
      } else {
        dy[p.i] -= r;
        dy[p.j] -= r;
        gain = r;
      }
      if (p.target >= 0) dy[static_cast<std::size_t>(p.target)] += gain;
      else dl += p.phi_out * gain;
    }
    if (lam != 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = lam * phi_[i] * y[i];
        dy[i] -= d;
        dl += d * phi_[i];
      }
    }
    dy[n] += dl;
  }

  /// Splits the weight equations as dw_i = gain_i - rate_i * w_i with
  /// gain_i, rate_i >= 0 for non-negative states; `dlambda` receives the
  /// full lambda derivative.
  void split(const std::vector<double>& y, std::vector<double>& gain, std::vector<double>& rate,
             double& dlambda) const {
    const std::size_t n = masses_.size();
    const double lam = y[n];
    std::fill(gain.begin(), gain.end(), 0.0);
    std::fill(rate.begin(), rate.end(), 0.0);
    dlambda = 0.0;
    for (const auto& p : pairs_) {
      const double r = p.k * y[p.i] * y[p.j];
      double g;
      if (p.i == p.j) {
        rate[p.i] += p.k * y[p.i];
        g = 0.5 * r;
      } else {
        rate[p.i] += p.k * y[p.j];
        rate[p.j] += p.k * y[p.i];
        g = r;
      }
      if (p.target >= 0) gain[static_cast<std::size_t>(p.target)] += g;
      else dlambda += p.phi_out * g;
    }
    for (std::size_t i = 0; i < n; ++i) {
      rate[i] += lam * phi_[i];
      dlambda += lam * phi_[i] * phi_[i] * y[i];
    }
  }

  DiscreteMeasure measure(const std::vector<double>& y) const {
    std::vector<Atom> atoms(masses_.size());
    for (std::size_t i = 0; i < masses_.size(); ++i) atoms[i] = {masses_[i], std::max(0.0, y[i])};
    return DiscreteMeasure::make(atoms, eps_);
  }

  /// ||w||_1 + |lambda|
  static double state_norm(const std::vector<double>& y) {
    CompensatedSum s;
    for (double v : y) s += std::abs(v);
    return s.value();
  }

 private:
  Truncation b_;
  double eps_;
  double lambda0_ = 0.0;
  std::vector<double> masses_;
  std::vector<double> phi_;
  std::vector<Pair> pairs_;
  std::vector<double> y0_;
  double k_max_ = 0.0;
  double phi_max_ = 0.0;
};

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

struct StateSample {
  double t;
  DiscreteMeasure mu;
  double lambda;
};

struct DiagnosticRow {
  double t;
  double mass;  // <x, mu>
  double phi1;  // <phi, mu>
  double phi2;  // <phi^2, mu>
  double lambda;
};

struct SolverMeta {
  std::string method;
  double atol = 0, rtol = 0;
  std::size_t accepted = 0, rejected = 0, hook_rejected = 0, rhs_evals = 0;
  std::size_t atoms = 0, pairs = 0;
  double min_weight_before_clamp = 0.0;
  std::size_t clamped = 0;
  double horizon = 0.0;            // 1 / (margin <phi^2, mu0>)
  double monitor_max_ratio = 0.0;  // max of <phi^2, mu_t> (horizon - t) for t <= 0.9 horizon
  std::size_t picard_subintervals = 0;
  std::size_t picard_max_iterations = 0;
};

struct Trajectory {
  Truncation b;
  std::vector<StateSample> samples;
  std::vector<DiagnosticRow> diagnostics;
  SolverMeta meta;
};

inline DiagnosticRow diagnostics_of(double t, const DiscreteMeasure& mu, double lambda, const SublinearFn& phi) {
  DiagnosticRow r{t, 0, 0, 0, lambda};
  CompensatedSum m, p1, p2;
  for (const auto& a : mu.atoms()) {
    const double p = phi(a.mass);
    m += a.mass * a.weight;
    p1 += p * a.weight;
    p2 += p * p * a.weight;
  }
  r.mass = m.value();
  r.phi1 = p1.value();
  r.phi2 = p2.value();
  return r;
}

struct SolveOptions {
  enum class Method { Rk, Picard };
  Method method = Method::Rk;
  double atol = 1e-10;
  double rtol = 1e-8;
  /// Output times; when empty, `samples` equal intervals on [0, t_end].
  std::vector<double> sample_times;
  std::size_t samples = 20;
  /// Merge resolution for the support closure; negative means "use the
  /// initial measure's epsilon".
  double epsilon_mass = -1.0;
  std::size_t max_atoms = 20000;
  double negativity_tol = 1e-12;
  int picard_nodes = 16;
  int picard_max_iter = 50;
  double picard_tol = 1e-12;
  std::size_t picard_max_subintervals = 200000;
};

namespace detail {

inline std::vector<double> sample_grid(double t_end, const SolveOptions& opt) {
  if (!(t_end > 0) || !std::isfinite(t_end)) throw InvalidArgument("t_end must be positive and finite");
  std::vector<double> ts = opt.sample_times;
  if (ts.empty()) {
    if (opt.samples < 1) throw InvalidArgument("samples must be >= 1");
    return linspace(0.0, t_end, opt.samples);
  }
  if (ts.front() != 0.0) ts.insert(ts.begin(), 0.0);
  if (ts.back() < t_end) ts.push_back(t_end);
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (!(ts[i] > ts[i - 1])) throw InvalidArgument("sample times must be strictly increasing", i);
  if (ts.back() > t_end) throw InvalidArgument("sample times exceed t_end");
  return ts;
}

// Chebyshev-Gauss-Lobatto nodes on [0,1] and the matrix S with
// S[m][l] = integral_0^{tau_m} ell_l(s) ds for the Lagrange basis ell_l.
struct SpectralIntegrator {
  std::vector<double> nodes;
  std::vector<std::vector<double>> s;

  explicit SpectralIntegrator(int p) {
    for (int m = 0; m <= p; ++m) nodes.push_back(0.5 * (1.0 - std::cos(std::numbers::pi * m / p)));
    std::vector<double> bw(static_cast<std::size_t>(p) + 1);
    for (int l = 0; l <= p; ++l) {
      double w = 1.0;
      for (int k = 0; k <= p; ++k)
        if (k != l) w /= (nodes[static_cast<std::size_t>(l)] - nodes[static_cast<std::size_t>(k)]);
      bw[static_cast<std::size_t>(l)] = w;
    }
    // Gauss-Legendre rule with p nodes integrates the degree-p basis exactly.
    const auto [gx, gw] = gauss_legendre(p);
    s.assign(nodes.size(), std::vector<double>(nodes.size(), 0.0));
    for (std::size_t m = 1; m < nodes.size(); ++m) {
      const double len = nodes[m];
      for (std::size_t q = 0; q < gx.size(); ++q) {
        const double x = 0.5 * len * (gx[q] + 1.0);
        for (std::size_t l = 0; l < nodes.size(); ++l) {
          double v = bw[l];
          for (std::size_t k = 0; k < nodes.size(); ++k)
            if (k != l) v *= (x - nodes[k]);
          s[m][l] += 0.5 * len * gw[q] * v;
        }
      }
    }
  }

  static std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1, p1 = z;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        if (n == 1) p0 = 1;
        dp = n * (z * p1 - p0) / (z * z - 1);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[static_cast<std::size_t>(i)] = z;
      w[static_cast<std::size_t>(i)] = 2 / ((1 - z * z) * dp * dp);
    }
    return {x, w};
  }
};

// Lipschitz-type constant for the Picard restart length (2 C N)^-1, with
// N = ||mu|| + lambda at the restart.
inline double picard_constant(const TruncatedSystem& sys) {
  const double km = sys.k_max(), pm = sys.phi_max();
  return std::max({0.5 * km * (3.0 + 2.0 * pm), pm + pm * pm, 1e-300});
}

// Clamps small negative weights; returns false on larger violations.
inline bool clamp_state(std::vector<double>& y, double tol, SolverMeta& meta) {
  for (double& v : y) {
    if (v < 0) {
      meta.min_weight_before_clamp = std::min(meta.min_weight_before_clamp, v);
      if (v < -tol) return false;
      v = 0.0;
      ++meta.clamped;
    }
  }
  return true;
}

} // namespace detail

/// Solves the truncated system from mu0 on [0, t_end]. lambda0 is
/// <phi 1_{B^c}, mu0>.
inline Trajectory solve_truncated(const DiscreteMeasure& mu0, const Kernel& k, const SublinearFn& phi,
                                  const Truncation& b, double t_end, const SolveOptions& opt = {}) {
  const auto grid = detail::sample_grid(t_end, opt);
  const double eps = opt.epsilon_mass >= 0 ? opt.epsilon_mass : mu0.epsilon();
  TruncatedSystem sys(mu0, k, phi, b, eps, opt.max_atoms);

  Trajectory tr{b, {}, {}, {}};
  auto& meta = tr.meta;
  meta.method = opt.method == SolveOptions::Method::Rk ? "rk" : "picard";
  meta.atol = opt.atol;
  meta.rtol = opt.rtol;
  meta.atoms = sys.size();
  meta.pairs = sys.pairs().size();
  const double m2 = moment(mu0, [&](double x) { const double p = phi(x); return p * p; });
  meta.horizon = m2 > 0 ? 1.0 / (k.margin() * m2) : std::numeric_limits<double>::infinity();

  const std::size_t n = sys.size();
  auto monitor = [&](double t, const std::vector<double>& y) {
    if (!(t <= 0.9 * meta.horizon)) return;
    CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) s += sys.phi_values()[i] * sys.phi_values()[i] * y[i];
    meta.monitor_max_ratio = std::max(meta.monitor_max_ratio, s.value() * (meta.horizon - t));
  };
  auto output = [&](double t, const std::vector<double>& y) {
    auto mu = sys.measure(y);
    tr.diagnostics.push_back(diagnostics_of(t, mu, y[n], phi));
    tr.samples.push_back({t, std::move(mu), y[n]});
  };

  monitor(0.0, sys.initial_state());
  if (opt.method == SolveOptions::Method::Rk) {
    OdeOptions oo;
    oo.atol = opt.atol;
    oo.rtol = opt.rtol;
    const auto st = dopri54([&](double, const std::vector<double>& y, std::vector<double>& dy) { sys.rhs(y, dy); },
                            sys.initial_state(), 0.0, grid, oo,
                            [&](double, std::vector<double>& y) { return detail::clamp_state(y, opt.negativity_tol, meta); },
                            monitor, output);
    meta.accepted = st.accepted;
    meta.rejected = st.rejected;
    meta.hook_rejected = st.hook_rejected;
    meta.rhs_evals = st.rhs_evals;
    return tr;
  }

  // Picard iteration on spectral collocation nodes, restarted every
  // (2 C N)^-1 time units.
  const detail::SpectralIntegrator si(opt.picard_nodes);
  const double c = detail::picard_constant(sys);
  {
    const double n0 = TruncatedSystem::state_norm(sys.initial_state());
    const double est = n0 > 0 ? t_end * 2.0 * c * n0 : 0.0;
    if (est > static_cast<double>(opt.picard_max_subintervals))
      throw InvalidArgument("picard mode would need about " + io::format_double(std::ceil(est)) +
                            " restarts for this kernel and truncation; use method rk");
  }
  std::vector<double> y = sys.initial_state();
  const std::size_t dim = y.size();
  const std::size_t nodes = si.nodes.size();
  std::vector<std::vector<double>> cur(nodes, y), nxt(nodes, y), f(nodes, std::vector<double>(dim));
  double t = 0.0;
  std::size_t next = 0;
  output(0.0, y);
  ++next;
  while (next < grid.size()) {
    const double norm = TruncatedSystem::state_norm(y);
    double h = norm > 0 ? 1.0 / (2.0 * c * norm) : grid.back() - t;
    bool hits = false;
    if (t + h >= grid[next]) {
      h = grid[next] - t;
      hits = true;
    }
    for (auto& v : cur) v = y;
    int it = 0;
    for (;; ++it) {
      if (it >= opt.picard_max_iter) throw NumericalFailure("picard iteration did not converge at t=" + io::format_double(t));
      for (std::size_t l = 0; l < nodes; ++l) {
        std::fill(f[l].begin(), f[l].end(), 0.0);
        sys.rhs(cur[l], f[l]);
      }
      double diff = 0.0;
      for (std::size_t m = 0; m < nodes; ++m) {
        for (std::size_t d = 0; d < dim; ++d) {
          double acc = 0.0;
          for (std::size_t l = 0; l < nodes; ++l) acc += si.s[m][l] * f[l][d];
          nxt[m][d] = y[d] + h * acc;
        }
        double dm = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dm += std::abs(nxt[m][d] - cur[m][d]);
        diff = std::max(diff, dm);
      }
      std::swap(cur, nxt);
      if (diff < opt.picard_tol) break;
    }
    meta.picard_max_iterations = std::max(meta.picard_max_iterations, static_cast<std::size_t>(it + 1));
    ++meta.picard_subintervals;
    if (meta.picard_subintervals > opt.picard_max_subintervals) throw NumericalFailure("picard restart budget exhausted");
    y = cur.back();
    if (!detail::clamp_state(y, opt.negativity_tol, meta))
      throw NumericalFailure("picard iterate has a negative weight beyond tolerance at t=" + io::format_double(t + h));
    t = hits ? grid[next] : t + h;
    monitor(t, y);
    if (hits) {
      output(t, y);
      ++next;
    }
  }
  return tr;
}

namespace detail {

/// Picard iteration in integrating-factor form
///   w_i(t) = e^{-theta (t-a)} w_i(a)
///          + int_a^t e^{-theta (t-s)} [gain_i + (theta - rate_i) w_i](s) ds
/// with theta >= every loss rate of the current iterate and a positive
/// (trapezoid) quadrature, so every iterate is non-negative by
/// construction. Used only to cross-check the main solvers.
struct IntegratingFactorResult {
  std::vector<double> y;
  double min_iterate_weight = 0.0;
  std::size_t subintervals = 0;
};

inline IntegratingFactorResult integrating_factor_picard(const TruncatedSystem& sys, double t_end, int points = 64,
                                                         int max_iter = 200, double tol = 1e-13) {
  IntegratingFactorResult res;
  std::vector<double> y = sys.initial_state();
  const std::size_t n = sys.size(), dim = y.size();
  const double c = picard_constant(sys);
  const auto q = static_cast<std::size_t>(points);
  std::vector<std::vector<double>> cur(q + 1, y), nxt(q + 1, y);
  std::vector<std::vector<double>> g(q + 1, std::vector<double>(n)), r(q + 1, std::vector<double>(n));
  std::vector<double> dl(q + 1);
  double t = 0.0;
  while (t < t_end) {
    const double norm = TruncatedSystem::state_norm(y);
    const double h = std::min(norm > 0 ? 1.0 / (2.0 * c * norm) : t_end, t_end - t);
    const double dt = h / static_cast<double>(q);
    for (auto& v : cur) v = y;
    for (int it = 0;; ++it) {
      if (it >= max_iter) throw NumericalFailure("integrating-factor iteration did not converge");
      double theta = 0.0;
      for (std::size_t m = 0; m <= q; ++m) {
        sys.split(cur[m], g[m], r[m], dl[m]);
        for (double v : r[m]) theta = std::max(theta, v);
      }
      nxt[0] = y;
      double diff = 0.0;
      for (std::size_t m = 1; m <= q; ++m) {
        for (std::size_t i = 0; i < n; ++i) {
          // u_i(s) = e^{theta (s - a)} w_i(s); integrand non-negative.
          auto integrand = [&](std::size_t k) {
            return std::exp(theta * dt * static_cast<double>(k)) * (g[k][i] + (theta - r[k][i]) * cur[k][i]);
          };
          const double prev_u = std::exp(theta * dt * static_cast<double>(m - 1)) * nxt[m - 1][i];
          const double u = prev_u + 0.5 * dt * (integrand(m - 1) + integrand(m));
          nxt[m][i] = std::exp(-theta * dt * static_cast<double>(m)) * u;
          res.min_iterate_weight = std::min(res.min_iterate_weight, nxt[m][i]);
        }
        nxt[m][n] = nxt[m - 1][n] + 0.5 * dt * (dl[m - 1] + dl[m]);
        double dm = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dm += std::abs(nxt[m][d] - cur[m][d]);
        diff = std::max(diff, dm);
      }
      std::swap(cur, nxt);
      if (diff < tol) break;
    }
    y = cur.back();
    t += h;
    ++res.subintervals;
    if (res.subintervals > 1000000) throw NumericalFailure("integrating-factor restart budget exhausted");
  }
  res.y = y;
  return res;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Exhaustion over nested truncations
// ---------------------------------------------------------------------------

struct ExhaustionResult {
  std::vector<Trajectory> runs;
  bool monotone = true;
  double max_atom_violation = 0.0;  // max of mu^B(x) - mu^{B'}(x)
  double max_phi_violation = 0.0;   // max of (<phi,mu^{B'}> + lambda^{B'}) - (<phi,mu^B> + lambda^B)
  std::vector<double> cauchy_gap;   // ||mu^{B_last} - mu^{B_prev}|| per sample
  const Trajectory& limit() const { return runs.back(); }
};

inline ExhaustionResult solve_exhaustion(const DiscreteMeasure& mu0, const Kernel& k, const SublinearFn& phi,
                                         const std::vector<Truncation>& bs, double t_end, SolveOptions opt = {},
                                         double tol = 1e-8) {
  if (bs.empty()) throw InvalidArgument("truncation list must be non-empty");
  for (std::size_t i = 1; i < bs.size(); ++i)
    if (!bs[i - 1].subset_of(bs[i])) throw InvalidArgument("truncation list must be nested", i);
  opt.sample_times = detail::sample_grid(t_end, opt);
  if (opt.epsilon_mass < 0) opt.epsilon_mass = mu0.epsilon();

  ExhaustionResult res;
  for (const auto& b : bs) res.runs.push_back(solve_truncated(mu0, k, phi, b, t_end, opt));
  for (std::size_t r = 1; r < res.runs.size(); ++r) {
    const auto& lo = res.runs[r - 1];
    const auto& hi = res.runs[r];
    for (std::size_t s = 0; s < lo.samples.size(); ++s) {
      for (const auto& a : lo.samples[s].mu.atoms())
        res.max_atom_violation = std::max(res.max_atom_violation, a.weight - hi.samples[s].mu.weight_at(a.mass));
      const double lhs = lo.diagnostics[s].phi1 + lo.diagnostics[s].lambda;
      const double rhs = hi.diagnostics[s].phi1 + hi.diagnostics[s].lambda;
      res.max_phi_violation = std::max(res.max_phi_violation, rhs - lhs);
    }
  }
  res.monotone = res.max_atom_violation <= tol && res.max_phi_violation <= tol;
  if (res.runs.size() >= 2) {
    const auto& a = res.runs[res.runs.size() - 2];
    const auto& b = res.runs.back();
    for (std::size_t s = 0; s < a.samples.size(); ++s)
      res.cauchy_gap.push_back(total_variation(a.samples[s].mu, b.samples[s].mu));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct ConservationReport {
  std::vector<DiagnosticRow> series;
  double mass_drift = 0.0;  // max relative |mass(t) - mass(0)|
  bool mass_conserved = true;
  bool phi_monotone = true;
  double max_phi_increase = 0.0;  // relative
  double lambda_tol = 0.0;
  std::optional<double> lambda_positive_after;
};

/// Moment series and flags for a solved trajectory. `lambda_positive_after`
/// is the first time lambda exceeds `lambda_tol`, interpolated linearly
/// between samples.
inline ConservationReport conservation_report(const Trajectory& tr, const SublinearFn& phi, double lambda_tol = 1e-4,
                                              double mass_tol = 1e-8) {
  if (tr.samples.empty()) throw InvalidArgument("empty trajectory");
  ConservationReport rep;
  rep.lambda_tol = lambda_tol;
  for (const auto& s : tr.samples) rep.series.push_back(diagnostics_of(s.t, s.mu, s.lambda, phi));
  const double m0 = rep.series.front().mass;
  const double scale0 = rep.series.front().phi1 + rep.series.front().lambda;
  for (std::size_t i = 0; i < rep.series.size(); ++i) {
    const auto& r = rep.series[i];
    if (m0 > 0) rep.mass_drift = std::max(rep.mass_drift, std::abs(r.mass - m0) / m0);
    if (i > 0) {
      const auto& p = rep.series[i - 1];
      const double inc = (r.phi1 + r.lambda) - (p.phi1 + p.lambda);
      rep.max_phi_increase = std::max(rep.max_phi_increase, scale0 > 0 ? inc / scale0 : inc);
    }
    if (!rep.lambda_positive_after && r.lambda > lambda_tol) {
      if (i == 0) {
        rep.lambda_positive_after = r.t;
      } else {
        const auto& p = rep.series[i - 1];
        rep.lambda_positive_after = p.t + (r.t - p.t) * (lambda_tol - p.lambda) / (r.lambda - p.lambda);
      }
    }
  }
  rep.mass_conserved = rep.mass_drift <= mass_tol;
  rep.phi_monotone = rep.max_phi_increase <= 1e-9;
  return rep;
}

/// Integrates d(lambda)/dt = lambda <phi^2, mu_t> along the sampled
/// trajectory (trapezoid in the exponent). A zero start stays zero.
inline std::vector<double> integrate_lambda_ode(const Trajectory& tr, double lambda0) {
  std::vector<double> out;
  double expo = 0.0;
  for (std::size_t i = 0; i < tr.diagnostics.size(); ++i) {
    if (i > 0)
      expo += 0.5 * (tr.diagnostics[i].t - tr.diagnostics[i - 1].t) * (tr.diagnostics[i].phi2 + tr.diagnostics[i - 1].phi2);
    out.push_back(lambda0 == 0.0 ? 0.0 : lambda0 * std::exp(expo));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Long format: one row per (sample time, atom).
inline std::string trajectory_csv(const Trajectory& tr) {
  io::CsvWriter w({"t", "mass", "weight"});
  for (const auto& s : tr.samples)
    for (const auto& a : s.mu.atoms()) {
      w << s.t << a.mass << a.weight;
      w.endrow();
    }
  return w.str();
}

inline std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows) {
  io::CsvWriter w({"t", "mass", "phi1", "phi2", "lambda"});
  for (const auto& r : rows) {
    w << r.t << r.mass << r.phi1 << r.phi2 << r.lambda;
    w.endrow();
  }
  return w.str();
}

inline nlohmann::json to_json(const SolverMeta& m) {
  return {{"method", m.method},
          {"atol", m.atol},
          {"rtol", m.rtol},
          {"accepted_steps", m.accepted},
          {"rejected_steps", m.rejected},
          {"negativity_rejections", m.hook_rejected},
          {"rhs_evals", m.rhs_evals},
          {"atoms", m.atoms},
          {"pairs", m.pairs},
          {"min_weight_before_clamp", m.min_weight_before_clamp},
          {"clamped", m.clamped},
          {"horizon", std::isfinite(m.horizon) ? nlohmann::json(m.horizon) : nlohmann::json(nullptr)},
          {"monitor_max_ratio", m.monitor_max_ratio},
          {"picard_subintervals", m.picard_subintervals},
          {"picard_max_iterations", m.picard_max_iterations}};
}

inline nlohmann::json to_json(const ConservationReport& r) {
  return {{"mass_drift", r.mass_drift},
          {"mass_conserved", r.mass_conserved},
          {"phi_monotone", r.phi_monotone},
          {"max_phi_increase", r.max_phi_increase},
          {"lambda_tol", r.lambda_tol},
          {"lambda_positive_after",
           r.lambda_positive_after ? nlohmann::json(*r.lambda_positive_after) : nlohmann::json(nullptr)}};
}

} // namespace coagkit

#pragma once

// The chain system
//   d/dt m_n = -lambda_n m_n m_{n+1},  lambda_n = base^n,  m_n(0) = 2^-n,
// its truncations at M (m_n = 0 for n > M) and the two limits obtained from
// even and odd truncations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "numeric.hpp"
#include "ode.hpp"

namespace coagkit {

struct ChainOptions {
  double lambda_base = 8.0;
  double tol = 1e-11;             // per-step error relative to m_n(0)
  double max_rel_change = 0.02;   // per-step cap on the exponent of live components
  double floor = 1e-30;           // components below floor * m_n(0) are not capped
  bool dense = false;             // keep every accepted step
  std::size_t max_steps = 10'000'000;
};

struct ChainTrajectory {
  int truncation = 0;  // M
  int n_max = 0;
  double lambda_base = 8.0;
  std::vector<double> t;                 // output grid
  std::vector<std::vector<double>> m;    // m[k][n-1] at t[k], n = 1..n_max
  std::vector<double> dense_t;           // accepted steps (when requested)
  std::vector<std::vector<double>> dense_m;
  std::size_t accepted = 0, rejected = 0;

  double initial(int n) const { return n <= truncation ? std::ldexp(1.0, -n) : 0.0; }
  double lambda(int n) const { return std::pow(lambda_base, n); }
};

namespace detail {

inline double phi1(double z) {
  if (z < 1e-8) return 1.0 - 0.5 * z;
  return -std::expm1(-z) / z;
}

// Exponents E_n with m_n(t+h) = m_n(t) exp(-E_n); second order in h: the
// decay rate of m_{n+1} over the step is the average of its values at the
// two ends, the end value taken from a first-order predictor.
inline void chain_exponents(const std::vector<double>& m, const std::vector<double>& lam, double h,
                            std::vector<double>& e, std::vector<double>& pred) {
  const std::size_t M = m.size();
  auto rate = [&](const std::vector<double>& v, std::size_t i) {  // decay rate of component i
    return i + 1 < M ? lam[i] * v[i + 1] : 0.0;
  };
  for (std::size_t i = 0; i < M; ++i) {
    double ex = 0.0;
    if (i + 1 < M) {
      const double a = rate(m, i + 1);
      ex = lam[i] * m[i + 1] * h * phi1(a * h);
    }
    pred[i] = m[i] * std::exp(-ex);
  }
  for (std::size_t i = 0; i < M; ++i) {
    double ex = 0.0;
    if (i + 1 < M) {
      const double a = 0.5 * (rate(m, i + 1) + rate(pred, i + 1));
      ex = lam[i] * m[i + 1] * h * phi1(a * h);
    }
    e[i] = ex;
  }
}

} // namespace detail

/// Integrates the truncation at M through the output grid `t_grid`
/// (ascending, non-negative). Output vectors have n_max entries; entries
/// above M are zero.
inline ChainTrajectory solve_chain(int truncation, int n_max, const std::vector<double>& t_grid,
                                   const ChainOptions& opt = {}) {
  if (n_max > 300) throw InvalidArgument("n_max above 300 overflows the rate ladder base^n");
  if (truncation < 1 || truncation > n_max) throw InvalidArgument("truncation must satisfy 1 <= M <= n_max");
  if (!(opt.lambda_base >= 0)) throw InvalidArgument("lambda_base must be >= 0");
  if (t_grid.empty()) throw InvalidArgument("time grid must be non-empty");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] >= 0) || !std::isfinite(t_grid[i])) throw InvalidArgument("times must be finite and >= 0", i);
    if (i > 0 && !(t_grid[i] > t_grid[i - 1])) throw InvalidArgument("time grid must be strictly increasing", i);
  }

  const auto M = static_cast<std::size_t>(truncation);
  ChainTrajectory tr;
  tr.truncation = truncation;
  tr.n_max = n_max;
  tr.lambda_base = opt.lambda_base;
  std::vector<double> lam(M), m0(M), m(M);
  for (std::size_t i = 0; i < M; ++i) {
    lam[i] = std::pow(opt.lambda_base, static_cast<double>(i + 1));
    m0[i] = m[i] = std::ldexp(1.0, -static_cast<int>(i + 1));
  }
  if (!std::isfinite(lam.back())) throw InvalidArgument("rate ladder overflows double range");

  auto emit = [&](double t) {
    std::vector<double> row(static_cast<std::size_t>(n_max), 0.0);
    std::copy(m.begin(), m.end(), row.begin());
    tr.t.push_back(t);
    tr.m.push_back(std::move(row));
  };
  auto store = [&](double t) {
    if (!opt.dense) return;
    tr.dense_t.push_back(t);
    tr.dense_m.push_back(m);
  };

  double t = 0.0;
  std::size_t next = 0;
  store(0.0);
  while (next < t_grid.size() && t_grid[next] <= 0.0) emit(t_grid[next++]);

  // Initial step from the fastest live rate.
  double fastest = 0.0;
  for (std::size_t i = 0; i + 1 < M; ++i) fastest = std::max(fastest, lam[i] * m[i + 1]);
  double h = fastest > 0 ? 0.1 * opt.max_rel_change / fastest : (t_grid.back() > 0 ? t_grid.back() : 1.0);

  std::vector<double> ec(M), pc(M), e1(M), e2(M), mh(M), p(M), ef(M), mf(M), mc(M);
  while (next < t_grid.size()) {
    if (tr.accepted + tr.rejected > opt.max_steps) throw NumericalFailure("chain step budget exhausted");
    const double target = t_grid[next];
    double hs = h;
    bool hits = false;
    if (t + hs >= target) {
      hs = target - t;
      hits = true;
    }
    // Coarse step and two half steps.
    detail::chain_exponents(m, lam, hs, ec, pc);
    detail::chain_exponents(m, lam, 0.5 * hs, e1, p);
    for (std::size_t i = 0; i < M; ++i) mh[i] = m[i] * std::exp(-e1[i]);
    detail::chain_exponents(mh, lam, 0.5 * hs, e2, p);
    double err = 0.0, cap = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      ef[i] = e1[i] + e2[i];
      mf[i] = m[i] * std::exp(-ef[i]);
      mc[i] = m[i] * std::exp(-ec[i]);
      err = std::max(err, std::abs(mf[i] - mc[i]) / m0[i]);
      if (m[i] > opt.floor * m0[i]) cap = std::max(cap, ef[i]);
    }
    err /= opt.tol;
    if (!std::isfinite(err)) err = 1e10;
    if (err <= 1.0 && cap <= opt.max_rel_change) {
      for (std::size_t i = 0; i < M; ++i) {
        const double ext = std::max(0.0, ef[i] + (ef[i] - ec[i]) / 3.0);
        m[i] *= std::exp(-ext);
      }
      t = hits ? target : t + hs;
      ++tr.accepted;
      store(t);
      if (hits) emit(t_grid[next++]);
      double fac = err == 0 ? 5.0 : std::clamp(0.9 * std::pow(err, -1.0 / 3.0), 0.2, 5.0);
      if (cap > 0) fac = std::min(fac, std::max(0.2, 0.9 * opt.max_rel_change / cap));
      h = hits ? std::max(h, hs * fac) : hs * fac;
    } else {
      ++tr.rejected;
      double fac = err > 1.0 ? std::clamp(0.9 * std::pow(err, -1.0 / 3.0), 0.1, 0.9) : 0.9;
      if (cap > opt.max_rel_change) fac = std::min(fac, 0.9 * opt.max_rel_change / cap);
      h = hs * fac;
      if (h < 1e-300) throw NumericalFailure("chain step size underflow");
    }
  }
  return tr;
}

/// Reference solution of the truncated chain by the Dormand-Prince engine
/// (only sensible for small M, where the system is not stiff).
inline ChainTrajectory solve_chain_rk(int truncation, const std::vector<double>& t_grid, double lambda_base = 8.0,
                                      double rtol = 1e-12) {
  if (truncation < 1 || truncation > 12) throw InvalidArgument("the RK chain reference supports 1 <= M <= 12");
  const auto M = static_cast<std::size_t>(truncation);
  std::vector<double> lam(M), y(M);
  for (std::size_t i = 0; i < M; ++i) {
    lam[i] = std::pow(lambda_base, static_cast<double>(i + 1));
    y[i] = std::ldexp(1.0, -static_cast<int>(i + 1));
  }
  ChainTrajectory tr;
  tr.truncation = truncation;
  tr.n_max = truncation;
  tr.lambda_base = lambda_base;
  OdeOptions oo;
  oo.atol = 1e-16;
  oo.rtol = rtol;
  const auto st = dopri54(
      [&](double, const std::vector<double>& v, std::vector<double>& dv) {
        for (std::size_t i = 0; i + 1 < M; ++i) dv[i] = -lam[i] * v[i] * v[i + 1];
      },
      y, 0.0, t_grid, oo, [](double, std::vector<double>&) { return true; }, [](double, const std::vector<double>&) {},
      [&](double t, const std::vector<double>& v) {
        tr.t.push_back(t);
        tr.m.push_back(v);
      });
  tr.accepted = st.accepted;
  tr.rejected = st.rejected;
  return tr;
}

// ---------------------------------------------------------------------------
// Quadrature on the dense step grid
// ---------------------------------------------------------------------------

namespace detail {

/// Cumulative integral of samples f(t_k) on a non-uniform grid, using the
/// cubic through the four nearest nodes on each interval.
inline std::vector<double> cumulative_integral(const std::vector<double>& t, const std::vector<double>& f) {
  const std::size_t n = t.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double a = t[k], b = t[k + 1];
    double seg;
    if (n < 4) {
      seg = 0.5 * (b - a) * (f[k] + f[k + 1]);
    } else {
      std::size_t s = k == 0 ? 0 : k - 1;
      if (s + 3 >= n) s = n - 4;
      // Three-point Gauss-Legendre on [a,b] of the Lagrange cubic.
      static constexpr double gx[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
      static constexpr double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
      seg = 0.0;
      for (int q = 0; q < 3; ++q) {
        const double x = 0.5 * (a + b) + 0.5 * (b - a) * gx[q];
        double v = 0.0;
        for (std::size_t i = s; i < s + 4; ++i) {
          double li = 1.0;
          for (std::size_t j = s; j < s + 4; ++j)
            if (j != i) li *= (x - t[j]) / (t[i] - t[j]);
          v += li * f[i];
        }
        seg += gw[q] * v;
      }
      seg *= 0.5 * (b - a);
    }
    out[k + 1] = out[k] + seg;
  }
  return out;
}

} // namespace detail

/// max over components and dense times of
///   |m_n(t) - m_n(0) exp(-lambda_n int_0^t m_{n+1})| / m_n(0)
/// with the integral computed from the dense trajectory.
inline double exponential_form_residual(const ChainTrajectory& tr) {
  if (tr.dense_t.empty()) throw InvalidArgument("exponential_form_residual needs a dense trajectory");
  const std::size_t M = static_cast<std::size_t>(tr.truncation);
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < M; ++i) {
    std::vector<double> f(tr.dense_t.size());
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = tr.dense_m[k][i + 1];
    const auto q = detail::cumulative_integral(tr.dense_t, f);
    const double m0 = tr.initial(static_cast<int>(i + 1));
    const double lam = tr.lambda(static_cast<int>(i + 1));
    for (std::size_t k = 0; k < f.size(); ++k)
      worst = std::max(worst, std::abs(tr.dense_m[k][i] - m0 * std::exp(-lam * q[k])) / m0);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Bounds and limits
// ---------------------------------------------------------------------------

struct Prop31Report {
  bool parity_even = true;  // truncation parity; odd truncations swap roles
  bool lower_ok = true;     // "kept" components >= half their initial value
  bool upper_ok = true;     // "decaying" components below the exponential envelope
  double worst_lower_margin = 0.0;  // min of m(t) - m(0)/2
  double worst_upper_margin = 0.0;  // min of envelope - m(t)
  std::vector<int> lower_failures, upper_failures;
};

/// Checks, for an even truncation, m_{2n}(t) >= m_{2n}(0)/2 and
/// m_{2n+1}(t) <= m_{2n+1}(0) exp(-4^{2n} t); for an odd truncation the
/// parities swap: m_{2n+1}(t) >= m_{2n+1}(0)/2 and
/// m_{2n}(t) <= m_{2n}(0) exp(-4^{2n-1} t). Decay bounds use the index's
/// own power 4^{n-1}, which covers both cases.
inline Prop31Report verify_prop31(const ChainTrajectory& tr) {
  if (tr.lambda_base != 8.0) throw InvalidArgument("the bounds are stated for lambda_n = 8^n");
  Prop31Report rep;
  rep.parity_even = tr.truncation % 2 == 0;
  const int keep_parity = rep.parity_even ? 0 : 1;
  rep.worst_lower_margin = std::numeric_limits<double>::infinity();
  rep.worst_upper_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    const double t = tr.t[k];
    for (int n = 1; n <= tr.truncation; ++n) {
      const double v = tr.m[k][static_cast<std::size_t>(n - 1)];
      const double m0 = tr.initial(n);
      if (n % 2 == keep_parity) {
        const double margin = v - 0.5 * m0;
        rep.worst_lower_margin = std::min(rep.worst_lower_margin, margin);
        if (margin < -1e-12 * m0) {
          rep.lower_ok = false;
          rep.lower_failures.push_back(n);
        }
      } else if (n < tr.truncation) {
        const double env = m0 * std::exp(-std::pow(4.0, n - 1) * t);
        const double margin = env - v;
        rep.worst_upper_margin = std::min(rep.worst_upper_margin, margin);
        if (margin < -1e-9 * m0) {
          rep.upper_ok = false;
          rep.upper_failures.push_back(n);
        }
      }
    }
  }
  return rep;
}

struct ChainLimits {
  std::vector<double> t;
  std::vector<std::vector<double>> m_plus, m_minus;  // [k][n-1]
  int even_truncation = 0, odd_truncation = 0;
  std::vector<double> gap_plus, gap_minus;  // max over t of |m^M - m^{M-2}| per component
  double separation_min = 0.0;              // min over t > 0 of m+_2 - m-_2
  bool monotone = true;
  double worst_monotone_violation = 0.0;
  std::vector<ChainTrajectory> even_runs, odd_runs;  // ascending M
};

/// m+ from the even truncation M = n_max, m- from the odd truncation
/// M = n_max - 1, with a monotone-in-M certificate over all truncations
/// M = 2..n_max.
inline ChainLimits extract_limits(int n_max, const std::vector<double>& t_grid, const ChainOptions& opt = {}) {
  if (n_max < 6 || n_max % 2 != 0) throw InvalidArgument("n_max must be even and >= 6");
  ChainLimits out;
  out.t = t_grid;
  for (int M = 2; M <= n_max; M += 2) out.even_runs.push_back(solve_chain(M, n_max, t_grid, opt));
  for (int M = 3; M <= n_max - 1; M += 2) out.odd_runs.push_back(solve_chain(M, n_max, t_grid, opt));
  out.even_truncation = n_max;
  out.odd_truncation = n_max - 1;
  out.m_plus = out.even_runs.back().m;
  out.m_minus = out.odd_runs.back().m;

  // Along even truncations, components of the kept parity decrease in M
  // and the others increase, for components below the truncation.
  auto certify = [&](const std::vector<ChainTrajectory>& runs, int keep_parity) {
    for (std::size_t r = 1; r < runs.size(); ++r) {
      const auto& a = runs[r - 1];
      const auto& b = runs[r];
      for (std::size_t k = 0; k < t_grid.size(); ++k)
        for (int n = 1; n < a.truncation; ++n) {
          const double va = a.m[k][static_cast<std::size_t>(n - 1)];
          const double vb = b.m[k][static_cast<std::size_t>(n - 1)];
          const double tol = 1e-8 * a.initial(n);
          const double viol = (n % 2 == keep_parity) ? vb - va : va - vb;
          out.worst_monotone_violation = std::max(out.worst_monotone_violation, viol);
          if (viol > tol) out.monotone = false;
        }
    }
  };
  certify(out.even_runs, 0);
  certify(out.odd_runs, 1);

  auto gaps = [&](const std::vector<ChainTrajectory>& runs) {
    std::vector<double> g(static_cast<std::size_t>(n_max), 0.0);
    const auto& a = runs[runs.size() - 2];
    const auto& b = runs.back();
    for (std::size_t k = 0; k < t_grid.size(); ++k)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::max(g[i], std::abs(b.m[k][i] - a.m[k][i]));
    return g;
  };
  out.gap_plus = gaps(out.even_runs);
  out.gap_minus = gaps(out.odd_runs);

  out.separation_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < t_grid.size(); ++k)
    if (t_grid[k] > 0) out.separation_min = std::min(out.separation_min, out.m_plus[k][1] - out.m_minus[k][1]);
  if (!out.monotone)
    throw NumericalFailure("truncations are not monotone in M (violation " +
                           io::format_double(out.worst_monotone_violation) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Mass bookkeeping for the measure-valued solution
// ---------------------------------------------------------------------------

struct ChainMassReport {
  std::vector<double> t;
  double mass0 = 0.0;            // sum_m x_m 2^-m (full series)
  std::vector<double> mass;      // sum_{m <= n_cut} x_m v_{m,n_cut}(t), a lower bound
  std::vector<double> certificate;  // a-priori bound on mass0 - mass(t)
  int n_cut = 0;
  bool halving_ok = true;        // r_{m,n} <= r_{m,n-1}/2 for even n at every time
  double worst_halving_ratio = 0.0;
  bool conserved = true;         // mass0 - mass(t) <= certificate(t) at every time
};

/// Tracks the mass of the measure-valued solution built on class masses
/// x_n = x_weights[n-1] through the additive counters k_m: v_{m,n}(t) is
/// the mass of class-m ancestry in particles of class <= n, and
/// r_{m,n} = 2^-m - v_{m,n} halves across every n of the truncation's
/// parity (even n for even truncations). Needs a dense
/// trajectory. `tail_ratio` bounds x_{n+1}/x_n beyond the supplied weights
/// (so the tail sum is geometric with ratio tail_ratio/2).
inline ChainMassReport chain_mass(const ChainTrajectory& tr, const std::vector<double>& x_weights, double tail_ratio,
                                  int n_cut = 0) {
  if (tr.dense_t.empty()) throw InvalidArgument("chain_mass needs a dense trajectory");
  if (x_weights.empty()) throw InvalidArgument("x_weights must be non-empty");
  for (std::size_t i = 0; i < x_weights.size(); ++i)
    if (!(x_weights[i] > 0) || !std::isfinite(x_weights[i])) throw InvalidArgument("x_weights must be positive", i);
  if (!(tail_ratio / 2 < 1)) throw InvalidArgument("sum of x_n 2^-n diverges: initial mass is infinite");
  const int M = tr.truncation;
  // Halving happens across indices of the truncation's parity.
  const int parity = M % 2;
  if (n_cut <= 0) n_cut = (M % 2 == 0) ? M - 2 : M - 1;
  n_cut = std::min(n_cut, M);
  if (n_cut < 1) throw InvalidArgument("truncation too small for the mass bookkeeping");
  if (static_cast<std::size_t>(n_cut) > x_weights.size()) throw InvalidArgument("x_weights shorter than n_cut");

  ChainMassReport rep;
  rep.n_cut = n_cut;
  // Full initial mass: supplied terms plus the geometric tail.
  CompensatedSum s0;
  for (std::size_t i = 0; i < x_weights.size(); ++i) s0 += x_weights[i] * std::ldexp(1.0, -static_cast<int>(i + 1));
  const double last = x_weights.back() * std::ldexp(1.0, -static_cast<int>(x_weights.size()));
  s0 += last * (tail_ratio / 2) / (1 - tail_ratio / 2);
  rep.mass0 = s0.value();
  double tail_beyond_cut = rep.mass0;
  for (int m = 1; m <= n_cut; ++m) tail_beyond_cut -= x_weights[static_cast<std::size_t>(m - 1)] * std::ldexp(1.0, -m);

  const std::size_t K = tr.dense_t.size();
  // v[m][k] = v_{m, n_cut}(t_k)
  std::vector<std::vector<double>> v(static_cast<std::size_t>(n_cut) + 1, std::vector<double>(K, 0.0));
  for (int m = 1; m <= n_cut; ++m) {
    std::vector<double> c(K, 1.0);  // c_{m,m} = 1
    std::vector<double> r_prev(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double u = c[k] * tr.dense_m[k][static_cast<std::size_t>(m - 1)];
      v[static_cast<std::size_t>(m)][k] = u;
      r_prev[k] = std::ldexp(1.0, -m) - u;
    }
    for (int n = m + 1; n <= n_cut; ++n) {
      std::vector<double> f(K);
      for (std::size_t k = 0; k < K; ++k) f[k] = c[k] * tr.dense_m[k][static_cast<std::size_t>(n - 2)];
      const auto q = detail::cumulative_integral(tr.dense_t, f);
      const double lam = tr.lambda(n - 1);
      for (std::size_t k = 0; k < K; ++k) {
        c[k] = lam * q[k];
        v[static_cast<std::size_t>(m)][k] += c[k] * tr.dense_m[k][static_cast<std::size_t>(n - 1)];
        const double r = std::ldexp(1.0, -m) - v[static_cast<std::size_t>(m)][k];
        // Below ~1e-8 of 2^-m the difference is dominated by quadrature
        // error, so only resolvable ratios are checked.
        if (n % 2 == parity && r_prev[k] > 1e-8 * std::ldexp(1.0, -m)) {
          const double ratio = r / r_prev[k];
          rep.worst_halving_ratio = std::max(rep.worst_halving_ratio, ratio);
          if (ratio > 0.5 + 1e-3) rep.halving_ok = false;
        }
        r_prev[k] = r;
      }
    }
  }

  // A-priori certificate: r_{m,n_cut} <= 2^-m 2^-h, h = number of halving
  // indices in (m, n_cut].
  CompensatedSum cert;
  for (int m = 1; m <= n_cut; ++m) {
    int halvings = 0;
    for (int n = m + 1; n <= n_cut; ++n) halvings += (n % 2 == parity);
    cert += x_weights[static_cast<std::size_t>(m - 1)] * std::ldexp(1.0, -m - halvings);
  }
  const double certificate = cert.value() + tail_beyond_cut;

  // Report on the output grid (dense times that coincide with it).
  for (double tg : tr.t) {
    auto it = std::lower_bound(tr.dense_t.begin(), tr.dense_t.end(), tg);
    if (it == tr.dense_t.end() || *it != tg) continue;
    const auto k = static_cast<std::size_t>(it - tr.dense_t.begin());
    CompensatedSum mass;
    for (int m = 1; m <= n_cut; ++m) mass += x_weights[static_cast<std::size_t>(m - 1)] * v[static_cast<std::size_t>(m)][k];
    rep.t.push_back(tg);
    rep.mass.push_back(mass.value());
    rep.certificate.push_back(certificate);
    if (rep.mass0 - mass.value() > certificate * (1 + 1e-9) + 1e-12) rep.conserved = false;
  }
  return rep;
}

/// x_n = alpha^n; the initial mass sum alpha^n 2^-n is finite iff alpha < 2.
inline ChainMassReport chain_mass_geometric(const ChainTrajectory& tr, double alpha, int n_cut = 0) {
  if (!(alpha > 0)) throw InvalidArgument("alpha must be positive");
  if (!(alpha < 2)) throw InvalidArgument("sum of alpha^n 2^-n diverges for alpha >= 2: initial mass is infinite");
  std::vector<double> x(static_cast<std::size_t>(tr.truncation));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::pow(alpha, static_cast<double>(i + 1));
  return chain_mass(tr, x, alpha, n_cut);
}

/// Long-format CSV: t, n, m_n.
inline std::string chain_csv(const ChainTrajectory& tr) {
  io::CsvWriter w({"t", "n", "m_n"});
  for (std::size_t k = 0; k < tr.t.size(); ++k)
    for (int n = 1; n <= tr.n_max; ++n) {
      w << tr.t[k] << n << tr.m[k][static_cast<std::size_t>(n - 1)];
      w.endrow();
    }
  return w.str();
}

} // namespace coagkit

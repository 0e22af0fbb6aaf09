#pragma once

// Test-only reference computations, written independently of the library:
// closed-form solutions, a plain-array RK4 for the discrete truncated
// equation, a birth-death chain for the particle count and a KS statistic.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

/// K = 1, mu0 = delta_1: n_k(t) = (t/2)^{k-1} / (1 + t/2)^{k+1}.
inline double constant_kernel_nk(int k, double t) {
  const double h = t / 2;
  return std::pow(h, k - 1) / std::pow(1 + h, k + 1);
}

/// K = xy, mu0 = delta_1, t < 1: n_k(t) = k^{k-3} t^{k-1} e^{-kt} / (k-1)!.
inline double multiplicative_nk(int k, double t) {
  const double lg = (k - 3) * std::log(static_cast<double>(k)) + (k - 1) * std::log(t) - k * t - std::lgamma(k);
  return std::exp(lg);
}

/// K = x + y, mu0 = delta_1:
/// n_k(t) = e^{-t} k^{k-1}/k! (1 - e^{-t})^{k-1} exp(-k (1 - e^{-t})).
inline double additive_nk(int k, double t) {
  const double tau = 1 - std::exp(-t);
  const double lg = -t + (k - 1) * std::log(static_cast<double>(k)) - std::lgamma(k + 1) + (k - 1) * std::log(tau) - k * tau;
  return std::exp(lg);
}

/// Truncated equation on B = {1..N} with integer masses, dense arrays and
/// classical RK4. y[0..N-1] = n_1..n_N, y[N] = lambda.
///   dn_k = 1/2 sum_{i+j=k} K n_i n_j - n_k sum_j K(k,j) n_j - lambda phi(k) n_k
///   dlambda = 1/2 sum_{i+j>N} phi(i+j) K n_i n_j + lambda sum phi(k)^2 n_k
struct TruncatedRk4 {
  int N;
  std::function<double(double, double)> K;
  std::function<double(double)> phi;

  std::vector<double> rhs(const std::vector<double>& y) const {
    std::vector<double> d(y.size(), 0.0);
    const double lam = y[N];
    for (int i = 1; i <= N; ++i)
      for (int j = 1; j <= N; ++j) {
        const double r = K(i, j) * y[i - 1] * y[j - 1];
        d[i - 1] -= r;
        if (i + j <= N) d[i + j - 1] += 0.5 * r;
        else d[N] += 0.5 * phi(i + j) * r;
      }
    for (int k = 1; k <= N; ++k) {
      d[k - 1] -= lam * phi(k) * y[k - 1];
      d[N] += lam * phi(k) * phi(k) * y[k - 1];
    }
    return d;
  }

  std::vector<double> solve(std::vector<double> y, double t_end, int steps) const {
    const double h = t_end / steps;
    for (int s = 0; s < steps; ++s) {
      auto k1 = rhs(y);
      auto tmp = y;
      for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
      auto k2 = rhs(tmp);
      for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
      auto k3 = rhs(tmp);
      for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + h * k3[i];
      auto k4 = rhs(tmp);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return y;
  }
};

/// Law of the particle count of the K = 1 coalescent, N -> N-1 at rate
/// N(N-1)/2, from N0 particles: E[N_t] by RK4 on the forward equations.
inline double constant_kernel_mean_count(int n0, double t, int steps = 20000) {
  std::vector<double> p(static_cast<std::size_t>(n0 + 1), 0.0);
  p[static_cast<std::size_t>(n0)] = 1.0;
  auto rate = [](int n) { return 0.5 * n * (n - 1); };
  auto rhs = [&](const std::vector<double>& q) {
    std::vector<double> d(q.size(), 0.0);
    for (int n = 1; n <= n0; ++n) {
      const double out = rate(n) * q[static_cast<std::size_t>(n)];
      d[static_cast<std::size_t>(n)] -= out;
      d[static_cast<std::size_t>(n - 1)] += out;
    }
    return d;
  };
  const double h = t / steps;
  for (int s = 0; s < steps; ++s) {
    auto k1 = rhs(p);
    auto tmp = p;
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + 0.5 * h * k1[i];
    auto k2 = rhs(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + 0.5 * h * k2[i];
    auto k3 = rhs(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) tmp[i] = p[i] + h * k3[i];
    auto k4 = rhs(tmp);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  double m = 0;
  for (int n = 0; n <= n0; ++n) m += n * p[static_cast<std::size_t>(n)];
  return m;
}

/// One-sample Kolmogorov-Smirnov statistic sqrt(n) D_n against `cdf`.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return std::sqrt(n) * d;
}

} // namespace oracle

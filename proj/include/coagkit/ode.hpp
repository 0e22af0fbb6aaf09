#pragma once

// Dormand-Prince 5(4) integrator with FSAL, max-norm error control and a
// caller-supplied acceptance hook (used to reject steps that produce
// negative weights).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace coagkit {

struct OdeOptions {
  double atol = 1e-10;
  double rtol = 1e-8;
  double h_initial = 0.0;  // 0: automatic
  double h_min_rel = 1e-14;  // relative to the integration span
  std::size_t max_steps = 5'000'000;
};

struct OdeStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t hook_rejected = 0;
  std::size_t rhs_evals = 0;
  double h_last = 0.0;
};

/// Integrates y' = f(t, y) from t0 through every time in `outputs`
/// (ascending, all >= t0). Steps land exactly on output times.
///
///   f(t, y, dy)             right-hand side, writes dy
///   accept(t, y) -> bool    may modify y; false rejects the step (h /= 4)
///   on_step(t, y)           called after every accepted step
///   on_output(t, y)         called at each output time (and at t0 if listed)
template <class F, class Accept, class OnStep, class OnOutput>
OdeStats dopri54(F&& f, std::vector<double> y, double t0, std::span<const double> outputs, const OdeOptions& opt,
                 Accept&& accept, OnStep&& on_step, OnOutput&& on_output) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  OdeStats st;
  const std::size_t n = y.size();
  if (outputs.empty()) return st;
  const double t_end = outputs.back();
  if (t_end < t0) throw InvalidArgument("output times must not precede the start time");
  const double span = std::max(t_end - t0, 1e-300);
  const double h_min = opt.h_min_rel * span;

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);
  auto eval = [&](double t, const std::vector<double>& yy, std::vector<double>& dy) {
    std::fill(dy.begin(), dy.end(), 0.0);
    f(t, yy, dy);
    ++st.rhs_evals;
  };

  double t = t0;
  std::size_t next = 0;
  while (next < outputs.size() && outputs[next] <= t0) {
    on_output(outputs[next], y);
    ++next;
  }
  if (next == outputs.size()) return st;

  eval(t, y, k1);
  double h = opt.h_initial;
  if (h <= 0) {
    double d0 = 0, d1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = opt.atol + opt.rtol * std::abs(y[i]);
      d0 = std::max(d0, std::abs(y[i]) / sc);
      d1 = std::max(d1, std::abs(k1[i]) / sc);
    }
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * span : 0.01 * d0 / d1;
    h = std::min(h, span);
  }

  while (next < outputs.size()) {
    if (st.accepted + st.rejected > opt.max_steps) throw NumericalFailure("ODE step budget exhausted");
    const double target = outputs[next];
    bool hits = false;
    double hs = h;
    if (t + hs >= target || target - (t + hs) < 1e-12 * span) {
      hs = target - t;
      hits = true;
    }

    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + hs * a21 * k1[i];
    eval(t + c2 * hs, tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + hs * (a31 * k1[i] + a32 * k2[i]);
    eval(t + c3 * hs, tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + hs * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    eval(t + c4 * hs, tmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + hs * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    eval(t + c5 * hs, tmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + hs * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    eval(t + hs, tmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + hs * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    eval(t + hs, ynew, k7);

    double err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err = std::max(err, std::abs(e) / sc);
    }
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      const double t_new = hits ? target : t + hs;
      tmp = ynew;
      if (!accept(t_new, ynew)) {
        ++st.hook_rejected;
        h = hs * 0.25;
        if (h < h_min) throw NumericalFailure("step size underflow after negative-weight rejections at t=" + std::to_string(t));
        continue;
      }
      ++st.accepted;
      t = t_new;
      // FSAL: k7 was evaluated at the unclamped point; re-evaluate if the
      // hook changed y.
      const bool changed = tmp != ynew;
      y.swap(ynew);
      if (changed) eval(t, y, k1);
      else k1.swap(k7);
      on_step(t, y);
      if (hits) {
        while (next < outputs.size() && outputs[next] <= t) {
          on_output(outputs[next], y);
          ++next;
        }
      }
      const double fac = err == 0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      // Do not let a short step that was clipped to an output time shrink h.
      h = hits ? std::max(h, hs * fac) : hs * fac;
      st.h_last = hs;
    } else {
      ++st.rejected;
      h = hs * std::clamp(0.9 * std::pow(err, -0.2), 0.2, 1.0);
      if (h < h_min) throw NumericalFailure("step size underflow at t=" + std::to_string(t));
    }
  }
  return st;
}

} // namespace coagkit

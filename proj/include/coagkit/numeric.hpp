#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace coagkit {

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double v) noexcept {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) noexcept {
    add(v);
    return *this;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

/// `count + 1` equally spaced points on [a, b], endpoints exact.
inline std::vector<double> linspace(double a, double b, std::size_t count) {
  std::vector<double> out(count + 1);
  for (std::size_t i = 0; i <= count; ++i)
    out[i] = (i == count) ? b : a + (b - a) * static_cast<double>(i) / static_cast<double>(count);
  return out;
}

/// Ordinary least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

} // namespace coagkit

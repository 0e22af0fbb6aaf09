#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace coagkit {

/// A compact set of masses B: an interval (0, x_max], an explicit finite
/// set of masses, or the whole half-line (used by the stochastic engine for
/// the untruncated coalescent).
class Truncation {
 public:
  enum class Kind { Interval, Set, All };

  static Truncation interval(double x_max) {
    if (!(x_max > 0) || !std::isfinite(x_max)) throw InvalidArgument("truncation x_max must be positive and finite");
    Truncation b;
    b.kind_ = Kind::Interval;
    b.x_max_ = x_max;
    return b;
  }
  static Truncation set(std::vector<double> masses, double tol = 0.0) {
    if (masses.empty()) throw InvalidArgument("truncation set must be non-empty");
    for (std::size_t i = 0; i < masses.size(); ++i)
      if (!(masses[i] > 0) || !std::isfinite(masses[i])) throw InvalidArgument("truncation masses must be positive", i);
    std::sort(masses.begin(), masses.end());
    masses.erase(std::unique(masses.begin(), masses.end()), masses.end());
    Truncation b;
    b.kind_ = Kind::Set;
    b.set_ = std::move(masses);
    b.tol_ = tol;
    b.x_max_ = b.set_.back();
    return b;
  }
  /// {1, 2, ..., n}
  static Truncation integers(int n) {
    if (n < 1) throw InvalidArgument("integer truncation needs n >= 1");
    std::vector<double> v;
    for (int i = 1; i <= n; ++i) v.push_back(i);
    return set(std::move(v));
  }
  static Truncation all() {
    Truncation b;
    b.kind_ = Kind::All;
    b.x_max_ = std::numeric_limits<double>::infinity();
    return b;
  }

  Kind kind() const noexcept { return kind_; }
  bool is_all() const noexcept { return kind_ == Kind::All; }
  double x_max() const noexcept { return x_max_; }
  const std::vector<double>& masses() const noexcept { return set_; }

  bool contains(double x) const {
    switch (kind_) {
      case Kind::All: return x > 0;
      case Kind::Interval: return x > 0 && x <= x_max_;
      case Kind::Set: {
        auto it = std::lower_bound(set_.begin(), set_.end(), x - tol_);
        return it != set_.end() && std::abs(*it - x) <= tol_;
      }
    }
    return false;
  }

  /// True when this set is contained in `other`.
  bool subset_of(const Truncation& other) const {
    if (other.is_all()) return true;
    if (is_all()) return false;
    if (kind_ == Kind::Interval) return other.kind_ == Kind::Interval && x_max_ <= other.x_max_;
    return std::all_of(set_.begin(), set_.end(), [&](double x) { return other.contains(x); });
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::All: return "all";
      case Kind::Interval: return "(0," + json(x_max_).dump() + "]";
      case Kind::Set: return "set of " + std::to_string(set_.size()) + " masses";
    }
    return {};
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case Kind::All: return {{"type", "all"}};
      case Kind::Interval: return {{"type", "interval"}, {"x_max", x_max_}};
      case Kind::Set: return {{"type", "set"}, {"masses", set_}};
    }
    return {};
  }

  static Truncation from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "all") return all();
    if (type == "interval") return interval(j.at("x_max").get<double>());
    if (type == "integers") return integers(j.at("n").get<int>());
    if (type == "set") return set(j.at("masses").get<std::vector<double>>());
    throw InvalidArgument("unknown truncation type '" + type + "'");
  }

 private:
  using json = nlohmann::json;
  Kind kind_ = Kind::All;
  double x_max_ = 0;
  double tol_ = 0;
  std::vector<double> set_;
};

} // namespace coagkit

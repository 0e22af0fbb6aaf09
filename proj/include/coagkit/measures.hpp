#pragma once

// Finite atomic measures on (0, inf), sublinear weight functions and the two
// distances used to state convergence (total variation and a dyadic weak
// metric).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "io.hpp"
#include "numeric.hpp"

namespace coagkit {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Sublinear functions
// ---------------------------------------------------------------------------

/// A function f : (0,inf) -> [0,inf) with f(a x) <= a f(x) for a >= 1.
/// Every built-in representation is sublinear by construction; tables are
/// checked when they are built.
class SublinearFn {
 public:
  struct Constant {
    double c;
  };
  /// sum_i coef_i * x^exponent_i with coef_i >= 0 and exponent_i <= 1.
  struct PowerSum {
    std::vector<std::pair<double, double>> terms;
  };
  struct MaxConst {
    double c;
  };
  /// Piecewise linear through the knots, linear through the origin below
  /// the first knot and constant beyond the last.
  struct Table {
    std::vector<std::pair<double, double>> knots;
  };
  struct Truncated {
    std::shared_ptr<const SublinearFn> base;
    double n;
  };
  using Repr = std::variant<Constant, PowerSum, MaxConst, Table, Truncated>;

  static SublinearFn constant(double c) {
    if (!(c > 0) || !std::isfinite(c)) throw InvalidArgument("constant sublinear function needs c > 0");
    return SublinearFn(Constant{c});
  }
  static SublinearFn identity() { return power_sum({{1.0, 1.0}}); }
  static SublinearFn power(double alpha, double coef = 1.0) { return power_sum({{coef, alpha}}); }
  static SublinearFn power_sum(std::vector<std::pair<double, double>> terms) {
    if (terms.empty()) throw InvalidArgument("power_sum needs at least one term");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto [coef, alpha] = terms[i];
      if (!(coef >= 0) || !std::isfinite(coef)) throw InvalidArgument("power_sum coefficient must be >= 0", i);
      if (!(alpha <= 1) || !std::isfinite(alpha))
        throw InvalidArgument("power_sum exponent must be <= 1 for sublinearity", i);
    }
    return SublinearFn(PowerSum{std::move(terms)});
  }
  static SublinearFn max_const(double c) {
    if (!(c > 0)) throw InvalidArgument("max_const needs c > 0");
    return SublinearFn(MaxConst{c});
  }
  /// Dominator used for the Brownian kernel: 2 (x^{1/3} + x^{-1/3}).
  static SublinearFn brownian_dominator() { return power_sum({{2.0, 1.0 / 3.0}, {2.0, -1.0 / 3.0}}); }

  static SublinearFn table(std::vector<std::pair<double, double>> knots) {
    if (knots.empty()) throw InvalidArgument("table needs at least one knot");
    std::sort(knots.begin(), knots.end());
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!(knots[i].first > 0)) throw InvalidArgument("table abscissae must be > 0", i);
      if (!(knots[i].second >= 0)) throw InvalidArgument("table values must be >= 0", i);
      if (i > 0 && knots[i].first == knots[i - 1].first) throw InvalidArgument("duplicate table abscissa", i);
    }
    // f(x)/x is non-increasing on a linear piece p + q x iff p >= 0.
    for (std::size_t i = 1; i < knots.size(); ++i) {
      const auto [x0, f0] = knots[i - 1];
      const auto [x1, f1] = knots[i];
      const double slope = (f1 - f0) / (x1 - x0);
      const double intercept = f0 - slope * x0;
      if (intercept < -1e-12 * std::max(1.0, std::abs(f0)))
        throw InvalidArgument("table is not sublinear on segment ending at knot", i);
    }
    return SublinearFn(Table{std::move(knots)});
  }

  const Repr& repr() const noexcept { return repr_; }

  double operator()(double x) const {
    return std::visit([x](const auto& r) { return eval(r, x); }, repr_);
  }

  json to_json() const {
    return std::visit(
        [](const auto& r) -> json {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, Constant>) {
            return {{"type", "constant"}, {"c", r.c}};
          } else if constexpr (std::is_same_v<T, PowerSum>) {
            json terms = json::array();
            for (auto [c, a] : r.terms) terms.push_back({c, a});
            return {{"type", "power_sum"}, {"terms", terms}};
          } else if constexpr (std::is_same_v<T, MaxConst>) {
            return {{"type", "max_const"}, {"c", r.c}};
          } else if constexpr (std::is_same_v<T, Table>) {
            json pts = json::array();
            for (auto [x, f] : r.knots) pts.push_back({x, f});
            return {{"type", "table"}, {"points", pts}};
          } else {
            return {{"type", "truncated"}, {"n", r.n}, {"base", r.base->to_json()}};
          }
        },
        repr_);
  }

  static SublinearFn from_json(const json& j);

 private:
  explicit SublinearFn(Repr r) : repr_(std::move(r)) {}
  friend SublinearFn truncate_sublinear(const SublinearFn&, double);

  static double eval(const Constant& r, double) { return r.c; }
  static double eval(const PowerSum& r, double x) {
    double s = 0;
    for (auto [c, a] : r.terms) s += (a == 1.0) ? c * x : (a == 0.0 ? c : c * std::pow(x, a));
    return s;
  }
  static double eval(const MaxConst& r, double x) { return std::max(x, r.c); }
  static double eval(const Table& r, double x) {
    const auto& k = r.knots;
    if (x <= k.front().first) return k.front().second * (x / k.front().first);
    if (x >= k.back().first) return k.back().second;
    auto it = std::upper_bound(k.begin(), k.end(), x, [](double v, const auto& p) { return v < p.first; });
    const auto& [x1, f1] = *it;
    const auto& [x0, f0] = *(it - 1);
    return f0 + (f1 - f0) * (x - x0) / (x1 - x0);
  }
  static double eval(const Truncated& r, double x) {
    const double inv = 1.0 / r.n;
    if (x <= inv) return r.n * x * (*r.base)(inv);
    if (x <= r.n) return (*r.base)(x);
    return 0.0;
  }

  Repr repr_;
};

/// The bounded-support approximation
///   phi_n(x) = n x phi(1/n) on (0, 1/n],  phi(x) on (1/n, n],  0 beyond n,
/// which increases to phi as n grows.
inline SublinearFn truncate_sublinear(const SublinearFn& phi, double n) {
  if (!(n >= 1) || !std::isfinite(n)) throw InvalidArgument("truncation index must be >= 1");
  return SublinearFn(SublinearFn::Truncated{std::make_shared<const SublinearFn>(phi), n});
}

inline SublinearFn SublinearFn::from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "identity") return identity();
  if (type == "constant") return constant(j.at("c").get<double>());
  if (type == "power") return power(j.at("alpha").get<double>(), j.value("coef", 1.0));
  if (type == "brownian") return brownian_dominator();
  if (type == "max_const") return max_const(j.at("c").get<double>());
  if (type == "power_sum" || type == "table") {
    std::vector<std::pair<double, double>> v;
    for (const auto& p : j.at(type == "table" ? "points" : "terms")) v.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    return type == "table" ? table(std::move(v)) : power_sum(std::move(v));
  }
  if (type == "truncated") return truncate_sublinear(from_json(j.at("base")), j.at("n").get<double>());
  throw InvalidArgument("unknown sublinear function type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Discrete measures
// ---------------------------------------------------------------------------

struct Atom {
  double mass;
  double weight;
  friend bool operator==(const Atom&, const Atom&) = default;
};

/// Finite non-negative atomic measure, immutable after construction.
/// Atoms are kept sorted by mass; no two atoms lie within `epsilon()`.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;

  /// Builds a measure from (mass, weight) pairs. Atoms within `epsilon` of a
  /// neighbour are merged (single linkage); the merged mass is the
  /// weight-weighted mean. Throws InvalidArgument naming the bad pair.
  static DiscreteMeasure make(std::span<const Atom> pairs, double epsilon = 0.0) {
    if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon_mass must be finite and >= 0");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (!(pairs[i].mass > 0) || !std::isfinite(pairs[i].mass))
        throw InvalidArgument("atom mass must be positive and finite", i);
      if (!(pairs[i].weight >= 0) || !std::isfinite(pairs[i].weight))
        throw InvalidArgument("atom weight must be non-negative and finite", i);
    }
    std::vector<Atom> sorted(pairs.begin(), pairs.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const Atom& a, const Atom& b) { return a.mass < b.mass; });

    DiscreteMeasure m;
    m.eps_ = epsilon;
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i + 1;
      while (j < sorted.size() && sorted[j].mass - sorted[j - 1].mass <= epsilon) ++j;
      if (j == i + 1) {
        m.atoms_.push_back(sorted[i]);
      } else {
        CompensatedSum w, mw, plain;
        for (std::size_t k = i; k < j; ++k) {
          w += sorted[k].weight;
          mw += sorted[k].mass * sorted[k].weight;
          plain += sorted[k].mass;
        }
        const double lo = sorted[i].mass, hi = sorted[j - 1].mass;
        double mass = lo == hi ? lo
                      : w.value() > 0 ? mw.value() / w.value()
                                      : plain.value() / static_cast<double>(j - i);
        m.atoms_.push_back({std::clamp(mass, lo, hi), w.value()});
      }
      i = j;
    }
    return m;
  }

  static DiscreteMeasure make(std::initializer_list<Atom> pairs, double epsilon = 0.0) {
    return make(std::span<const Atom>(pairs.begin(), pairs.size()), epsilon);
  }

  double epsilon() const noexcept { return eps_; }
  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }
  bool empty() const noexcept { return atoms_.empty(); }

  /// Total variation norm (sum of weights; the measure is non-negative).
  double norm() const {
    CompensatedSum s;
    for (const auto& a : atoms_) s += a.weight;
    return s.value();
  }

  /// Weight of the atom within epsilon of `mass`, or 0.
  double weight_at(double mass) const {
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), mass - eps_,
                               [](const Atom& a, double v) { return a.mass < v; });
    if (it != atoms_.end() && std::abs(it->mass - mass) <= eps_) return it->weight;
    return 0.0;
  }

  double min_mass() const { return atoms_.empty() ? 0.0 : atoms_.front().mass; }
  double max_mass() const { return atoms_.empty() ? 0.0 : atoms_.back().mass; }

  friend bool operator==(const DiscreteMeasure&, const DiscreteMeasure&) = default;

 private:
  std::vector<Atom> atoms_;
  double eps_ = 0.0;
};

inline DiscreteMeasure make_measure(std::span<const Atom> pairs, double epsilon = 0.0) {
  return DiscreteMeasure::make(pairs, epsilon);
}

/// <f, mu> with compensated summation.
template <std::invocable<double> F>
double moment(const DiscreteMeasure& mu, F&& f) {
  CompensatedSum s;
  for (const auto& a : mu.atoms()) s += f(a.mass) * a.weight;
  const double v = s.value();
  if (!std::isfinite(v)) throw NumericalFailure("moment overflowed or hit a non-finite value");
  return v;
}

/// The measure f.mu (weights multiplied by f at each atom).
template <std::invocable<double> F>
DiscreteMeasure reweight(const DiscreteMeasure& mu, F&& f) {
  std::vector<Atom> out;
  out.reserve(mu.size());
  for (const auto& a : mu.atoms()) out.push_back({a.mass, f(a.mass) * a.weight});
  return DiscreteMeasure::make(out, mu.epsilon());
}

/// Walks the union of atom sites of two measures with equal resolution,
/// calling visit(mass, weight_mu, weight_nu).
template <class Visit>
void for_each_site(const DiscreteMeasure& mu, const DiscreteMeasure& nu, Visit&& visit) {
  if (mu.epsilon() != nu.epsilon()) throw InvalidArgument("measures have different epsilon_mass");
  const double eps = mu.epsilon();
  const auto& a = mu.atoms();
  const auto& b = nu.atoms();
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].mass < b[j].mass - eps)) {
      visit(a[i].mass, a[i].weight, 0.0);
      ++i;
    } else if (i == a.size() || b[j].mass < a[i].mass - eps) {
      visit(b[j].mass, 0.0, b[j].weight);
      ++j;
    } else {
      visit(a[i].mass, a[i].weight, b[j].weight);
      ++i;
      ++j;
    }
  }
}

/// ||mu - nu||: sum over atom sites of |mu(x) - nu(x)|.
inline double total_variation(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  CompensatedSum s;
  for_each_site(mu, nu, [&](double, double wa, double wb) { s += std::abs(wa - wb); });
  return s.value();
}

/// Dyadic dictionary of hat functions on (0, x_max]. Level l = 1..levels
/// contributes hats centred at j x_max / 2^l (j = 1..2^l - 1) of half-width
/// h = x_max / 2^l and height min(1, h): each has support in [0, x_max],
/// sup <= 1 and Lipschitz constant <= 1. Hats are enumerated coarse to fine
/// and the k-th one carries weight 2^-k.
class WeakMetricDict {
 public:
  struct Hat {
    double center;
    double half_width;
    double height;
    double weight;
    double operator()(double x) const noexcept {
      const double r = 1.0 - std::abs(x - center) / half_width;
      return r > 0 ? height * r : 0.0;
    }
  };

  WeakMetricDict(double x_max, int levels) : x_max_(x_max), levels_(levels) {
    if (!(x_max > 0) || !std::isfinite(x_max)) throw InvalidArgument("x_max must be positive");
    if (levels < 1 || levels > 20) throw InvalidArgument("levels must be in [1, 20]");
    double w = 1.0;
    for (int l = 1; l <= levels; ++l) {
      const double cells = std::ldexp(1.0, l);
      const double h = x_max / cells;
      for (int j = 1; j < static_cast<int>(cells); ++j) {
        w *= 0.5;
        hats_.push_back({j * h, h, std::min(1.0, h), w});
      }
    }
  }

  double x_max() const noexcept { return x_max_; }
  int levels() const noexcept { return levels_; }
  const std::vector<Hat>& hats() const noexcept { return hats_; }

 private:
  double x_max_;
  int levels_;
  std::vector<Hat> hats_;
};

/// d0(mu, nu) = sum_k 2^-k min(1, |<g_k, mu - nu>|). Atoms above x_max are
/// invisible to this metric.
inline double weak_distance_d0(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const WeakMetricDict& dict) {
  const auto& hats = dict.hats();
  std::vector<CompensatedSum> acc(hats.size());
  for_each_site(mu, nu, [&](double x, double wa, double wb) {
    if (x >= dict.x_max() || wa == wb) return;
    const double d = wa - wb;
    for (std::size_t k = 0; k < hats.size(); ++k) {
      const double g = hats[k](x);
      if (g != 0.0) acc[k] += g * d;
    }
  });
  CompensatedSum s;
  for (std::size_t k = 0; k < hats.size(); ++k) s += hats[k].weight * std::min(1.0, std::abs(acc[k].value()));
  return s.value();
}

// ---------------------------------------------------------------------------
// Serialization: CSV (mass,weight) and JSON {epsilon_mass, atoms}
// ---------------------------------------------------------------------------

inline std::string to_csv(const DiscreteMeasure& mu) {
  io::CsvWriter w({"mass", "weight"});
  for (const auto& a : mu.atoms()) {
    w << a.mass << a.weight;
    w.endrow();
  }
  return w.str();
}

inline DiscreteMeasure measure_from_csv(std::string_view text, double epsilon = 0.0) {
  std::vector<Atom> atoms;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "mass,weight") throw InvalidArgument("measure CSV must start with header 'mass,weight'");
      continue;
    }
    const auto cells = io::split(line);
    const auto m = cells.size() == 2 ? io::parse_double(cells[0]) : std::nullopt;
    const auto w = cells.size() == 2 ? io::parse_double(cells[1]) : std::nullopt;
    if (!m || !w) throw InvalidArgument("malformed measure CSV line " + std::to_string(line_no));
    atoms.push_back({*m, *w});
  }
  return DiscreteMeasure::make(atoms, epsilon);
}

inline json to_json(const DiscreteMeasure& mu) {
  json atoms = json::array();
  for (const auto& a : mu.atoms()) atoms.push_back({a.mass, a.weight});
  return {{"epsilon_mass", mu.epsilon()}, {"atoms", atoms}};
}

inline DiscreteMeasure measure_from_json(const json& j) {
  std::vector<Atom> atoms;
  for (const auto& p : j.at("atoms")) atoms.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return DiscreteMeasure::make(atoms, j.value("epsilon_mass", 0.0));
}

} // namespace coagkit

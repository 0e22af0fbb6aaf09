#pragma once

// Coagulation kernels. Every kernel carries a dominating sublinear phi and a
// margin with K(x,y) <= margin * phi(x) * phi(y).

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "measures.hpp"

namespace coagkit {

struct DominationReport {
  double max_ratio = 0.0;
  std::pair<double, double> worst_pair{0.0, 0.0};
  std::size_t pairs_checked = 0;
  bool passed = false;
};

class Kernel {
 public:
  struct Constant {
    double c;
  };
  struct Additive {};
  struct Multiplicative {};
  struct Brownian {};
  /// K(x,y) = base^n when {class(x), class(y)} = {n, n+1}, else 0.
  struct IndexChain {
    double lambda_base;
    std::vector<double> classes;  // classes[n-1] = x_n
    std::function<int(double)> class_map;  // empty: exact lookup in `classes`
  };
  struct Custom {
    std::function<double(double, double)> fn;
    std::string name;
  };
  using Repr = std::variant<Constant, Additive, Multiplicative, Brownian, IndexChain, Custom>;

  static Kernel constant(double c) {
    if (!(c >= 0) || !std::isfinite(c)) throw InvalidArgument("constant kernel needs c >= 0");
    return Kernel(Constant{c}, SublinearFn::constant(c > 0 ? std::sqrt(c) : 1.0), 1.0);
  }
  static Kernel additive() {
    return Kernel(Additive{}, SublinearFn::power_sum({{1.0, 1.0}, {1.0, 0.0}}), 1.0);
  }
  static Kernel multiplicative() { return Kernel(Multiplicative{}, SublinearFn::identity(), 1.0); }
  static Kernel brownian() { return Kernel(Brownian{}, SublinearFn::brownian_dominator(), 1.0); }

  /// Index-level chain kernel. The default dominator is phi(x) = x with the
  /// smallest margin >= 1 that covers every rung.
  static Kernel index_chain(double lambda_base, std::vector<double> classes,
                            std::function<int(double)> class_map = {}) {
    if (!(lambda_base >= 0) || !std::isfinite(lambda_base)) throw InvalidArgument("lambda_base must be >= 0");
    if (classes.empty()) throw InvalidArgument("index_chain needs at least one class mass");
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (!(classes[i] > 0) || !std::isfinite(classes[i])) throw InvalidArgument("class masses must be positive", i);
      if (i > 0 && !(classes[i] > classes[i - 1])) throw InvalidArgument("class masses must be increasing", i);
    }
    if (classes.size() > 300) throw InvalidArgument("index_chain supports at most 300 classes");
    double margin = 1.0;
    for (std::size_t n = 1; n < classes.size(); ++n)
      margin = std::max(margin, std::pow(lambda_base, static_cast<double>(n)) / (classes[n - 1] * classes[n]));
    return Kernel(IndexChain{lambda_base, std::move(classes), std::move(class_map)}, SublinearFn::identity(), margin);
  }

  /// User kernel with its own dominator; domination is checked on
  /// [range_lo, range_hi] at registration and an InvalidArgument is thrown
  /// if it fails.
  static Kernel custom(std::function<double(double, double)> fn, std::string name, SublinearFn phi,
                       double margin = 1.0, double range_lo = 1e-3, double range_hi = 1e3);

  /// Same kernel, different dominator. The caller is responsible for the
  /// bound; `verify_domination` reports it.
  Kernel with_phi(SublinearFn phi, double margin) const {
    if (!(margin >= 1) || !std::isfinite(margin)) throw InvalidArgument("domination margin must be >= 1");
    Kernel k = *this;
    k.phi_ = std::move(phi);
    k.margin_ = margin;
    return k;
  }

  double operator()(double x, double y) const {
    if (!(x > 0) || !(y > 0)) throw InvalidArgument("kernel arguments must be positive masses");
    return eval_unchecked(x, y);
  }

  /// Evaluation without argument checks, for inner loops over valid states.
  double eval_unchecked(double x, double y) const {
    return std::visit([&](const auto& r) { return eval(r, x, y); }, repr_);
  }

  const SublinearFn& phi() const noexcept { return phi_; }
  double margin() const noexcept { return margin_; }
  const Repr& repr() const noexcept { return repr_; }

  bool is_zero() const {
    if (auto* c = std::get_if<Constant>(&repr_)) return c->c == 0.0;
    if (auto* ic = std::get_if<IndexChain>(&repr_)) return ic->lambda_base == 0.0;
    return false;
  }

  /// Class index of a mass under an index_chain kernel (0 = no class).
  int chain_class(double x) const {
    const auto* ic = std::get_if<IndexChain>(&repr_);
    if (!ic) throw InvalidArgument("chain_class called on a kernel that is not index_chain");
    return class_of(*ic, x);
  }

  std::string name() const {
    return std::visit(
        [](const auto& r) -> std::string {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, Constant>) return "constant";
          else if constexpr (std::is_same_v<T, Additive>) return "additive";
          else if constexpr (std::is_same_v<T, Multiplicative>) return "multiplicative";
          else if constexpr (std::is_same_v<T, Brownian>) return "brownian";
          else if constexpr (std::is_same_v<T, IndexChain>) return "index_chain";
          else return r.name;
        },
        repr_);
  }

  json to_json() const {
    json j = {{"type", name()}};
    if (auto* c = std::get_if<Constant>(&repr_)) j["c"] = c->c;
    if (auto* ic = std::get_if<IndexChain>(&repr_)) {
      j["lambda_base"] = ic->lambda_base;
      j["classes"] = ic->classes;
    }
    return j;
  }

  static Kernel from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "constant") return constant(j.value("c", 1.0));
    if (type == "additive") return additive();
    if (type == "multiplicative") return multiplicative();
    if (type == "brownian") return brownian();
    if (type == "index_chain") {
      std::vector<double> classes;
      if (j.contains("classes")) {
        classes = j.at("classes").get<std::vector<double>>();
      } else {
        const int n = j.at("n_classes").get<int>();
        const double ratio = j.value("mass_ratio", 1.5);
        for (int i = 1; i <= n; ++i) classes.push_back(std::pow(ratio, i));
      }
      return index_chain(j.value("lambda_base", 8.0), std::move(classes));
    }
    throw InvalidArgument("unknown kernel type '" + type + "'");
  }

 private:
  Kernel(Repr r, SublinearFn phi, double margin) : repr_(std::move(r)), phi_(std::move(phi)), margin_(margin) {}

  static double eval(const Constant& r, double, double) { return r.c; }
  static double eval(const Additive&, double x, double y) { return x + y; }
  static double eval(const Multiplicative&, double x, double y) { return x * y; }
  static double eval(const Brownian&, double x, double y) {
    // Written symmetrically so that K(x,y) and K(y,x) round identically.
    const double a = std::cbrt(x), b = std::cbrt(y);
    return (a + b) * (1.0 / a + 1.0 / b);
  }
  static int class_of(const IndexChain& r, double x) {
    if (r.class_map) return r.class_map(x);
    auto it = std::lower_bound(r.classes.begin(), r.classes.end(), x * (1 - 1e-12));
    if (it != r.classes.end() && std::abs(*it - x) <= 1e-12 * x) return static_cast<int>(it - r.classes.begin()) + 1;
    return 0;
  }
  static double eval(const IndexChain& r, double x, double y) {
    const int a = class_of(r, x), b = class_of(r, y);
    if (a == 0 || b == 0 || std::abs(a - b) != 1) return 0.0;
    return std::pow(r.lambda_base, static_cast<double>(std::min(a, b)));
  }
  static double eval(const Custom& r, double x, double y) { return r.fn(x, y); }

  Repr repr_;
  SublinearFn phi_;
  double margin_;
};

/// Maximises K(x,y) / (phi(x) phi(y)) over a log-spaced grid on
/// [lo, hi]^2 of about `samples` pairs, plus the diagonal and, for chain
/// kernels, every pair of class masses.
inline DominationReport verify_domination(const Kernel& k, std::size_t samples, double lo = 1e-3, double hi = 1e3) {
  if (samples < 1) throw InvalidArgument("samples must be >= 1");
  if (!(lo > 0) || !(hi >= lo)) throw InvalidArgument("mass range must satisfy 0 < lo <= hi");
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(samples))));
  std::vector<double> xs;
  for (std::size_t i = 0; i < side; ++i) {
    const double u = side == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(side - 1);
    xs.push_back(std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo))));
  }
  if (auto* ic = std::get_if<Kernel::IndexChain>(&k.repr())) xs.insert(xs.end(), ic->classes.begin(), ic->classes.end());

  DominationReport rep;
  auto check = [&](double x, double y) {
    const double px = k.phi()(x), py = k.phi()(y);
    if (!(px > 0) || !(py > 0)) throw InvalidArgument("dominating phi vanishes at a sampled mass");
    const double r = k.eval_unchecked(x, y) / (px * py);
    ++rep.pairs_checked;
    if (r > rep.max_ratio || rep.pairs_checked == 1) {
      rep.max_ratio = r;
      rep.worst_pair = {x, y};
    }
  };
  for (double x : xs)
    for (double y : xs) check(x, y);
  rep.passed = rep.max_ratio <= k.margin() * (1 + 1e-12);
  return rep;
}

inline Kernel Kernel::custom(std::function<double(double, double)> fn, std::string name, SublinearFn phi, double margin,
                             double range_lo, double range_hi) {
  if (!fn) throw InvalidArgument("custom kernel needs an evaluator");
  if (!(margin >= 1) || !std::isfinite(margin)) throw InvalidArgument("domination margin must be >= 1");
  Kernel k(Custom{std::move(fn), std::move(name)}, std::move(phi), margin);
  const auto rep = verify_domination(k, 10000, range_lo, range_hi);
  if (!rep.passed)
    throw InvalidArgument("custom kernel '" + k.name() + "' is not dominated: ratio " + io::format_double(rep.max_ratio) +
                          " at (" + io::format_double(rep.worst_pair.first) + ", " +
                          io::format_double(rep.worst_pair.second) + ")");
  return k;
}

} // namespace coagkit

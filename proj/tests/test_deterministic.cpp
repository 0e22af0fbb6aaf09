#include <catch_amalgamated.hpp>

#include <coagkit/deterministic.hpp>
#include <coagkit/rng.hpp>

#include "oracles.hpp"

#include <cmath>

using namespace coagkit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const DiscreteMeasure kDelta1 = DiscreteMeasure::make({{1.0, 1.0}});

SolveOptions tight(std::vector<double> times) {
  SolveOptions o;
  o.atol = 1e-13;
  o.rtol = 1e-11;
  o.sample_times = std::move(times);
  return o;
}

} // namespace

TEST_CASE("apply_L conserves mass and matches the pair rates") {
  const auto mu = DiscreteMeasure::make({{1.0, 2.0}, {2.0, 1.0}});
  const auto d = apply_L(mu, Kernel::constant(1.0));
  // pairs: (1,1) rate 4 -> gain 2 at mass 2, loss 4 at 1; (1,2) rate 2 -> gain 2 at 3; (2,2) rate 1 -> gain 0.5 at 4
  double mass = 0, count = 0;
  for (const auto& a : d) {
    mass += a.mass * a.weight;
    count += a.weight;
  }
  CHECK_THAT(mass, WithinAbs(0.0, 1e-14));
  // dN/dt = -1/2 <1, mu>^2 for K = 1
  CHECK_THAT(count, WithinAbs(-0.5 * 9.0, 1e-14));
}

TEST_CASE("apply_LB routes merges leaving B into lambda") {
  const auto mu = DiscreteMeasure::make({{1.0, 1.0}});
  const auto phi = SublinearFn::identity();
  const auto r = apply_LB(mu, 0.5, Kernel::multiplicative(), phi, Truncation::interval(1.5));
  // merge 1+1 = 2 leaves B: dlambda = 1/2 phi(2) K(1,1) + lambda phi^2 = 1 + 0.5
  CHECK_THAT(r.dlambda, WithinAbs(1.5, 1e-15));
  REQUIRE(r.dmu.size() == 1);
  // loss: K(1,1) * 1 + lambda phi(1) = 1.5
  CHECK_THAT(r.dmu[0].weight, WithinAbs(-1.5, 1e-15));
  CHECK_THROWS_AS(apply_LB(DiscreteMeasure::make({{3.0, 1.0}}), 0.0, Kernel::constant(1.0), phi,
                           Truncation::interval(2.0)),
                  InvalidArgument);
}

TEST_CASE("blowup horizon") {
  CHECK(blowup_horizon(kDelta1, SublinearFn::identity()) == 1.0);
  CHECK(blowup_horizon(DiscreteMeasure::make({{2.0, 0.5}}), SublinearFn::identity()) == 0.5);
  CHECK(std::isinf(blowup_horizon(DiscreteMeasure{}, SublinearFn::identity())));
}

TEST_CASE("constant kernel matches the exact solution") {
  const std::vector<double> ts = {0.5, 1.0, 2.0, 4.0};
  const auto tr = solve_truncated(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(50),
                                  4.0, tight(ts));
  double worst = 0;
  for (const auto& s : tr.samples) {
    if (s.t == 0) continue;
    for (int k = 1; k <= 10; ++k) worst = std::max(worst, std::abs(s.mu.weight_at(k) - oracle::constant_kernel_nk(k, s.t)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("multiplicative kernel matches the exact pre-gelation solution") {
  const auto tr = solve_truncated(kDelta1, Kernel::multiplicative(), SublinearFn::identity(), Truncation::interval(120),
                                  0.6, tight({0.3, 0.6}));
  for (const auto& s : tr.samples) {
    if (s.t == 0) continue;
    for (int k = 1; k <= 12; ++k) CHECK_THAT(s.mu.weight_at(k), WithinAbs(oracle::multiplicative_nk(k, s.t), 1e-9));
  }
}

TEST_CASE("additive kernel matches the exact solution") {
  const auto tr = solve_truncated(kDelta1, Kernel::additive(), Kernel::additive().phi(), Truncation::interval(300), 1.0,
                                  tight({0.5, 1.0}));
  for (const auto& s : tr.samples) {
    if (s.t == 0) continue;
    for (int k = 1; k <= 12; ++k) CHECK_THAT(s.mu.weight_at(k), WithinAbs(oracle::additive_nk(k, s.t), 1e-9));
  }
}

TEST_CASE("truncated system with leaks matches an independent RK4 (λ included)") {
  struct Case {
    Kernel k;
    int n;
    double t;
  };
  for (const auto& c : {Case{Kernel::additive(), 10, 1.0}, Case{Kernel::multiplicative(), 8, 0.8},
                        Case{Kernel::brownian(), 12, 1.5}}) {
    const auto& phi = c.k.phi();
    const auto mu0 = DiscreteMeasure::make({{1.0, 0.6}, {2.0, 0.2}, {3.0, 0.1}, {20.0, 0.01}});
    const auto b = Truncation::interval(c.n);
    const auto tr = solve_truncated(mu0, c.k, phi, b, c.t, tight({c.t}));
    oracle::TruncatedRk4 rk{c.n, [&](double x, double y) { return c.k(x, y); }, [&](double x) { return phi(x); }};
    std::vector<double> y(static_cast<std::size_t>(c.n + 1), 0.0);
    y[0] = 0.6;
    y[1] = 0.2;
    y[2] = 0.1;
    y[static_cast<std::size_t>(c.n)] = 0.01 * phi(20.0);
    const auto ref = rk.solve(y, c.t, 4000);
    const auto& last = tr.samples.back();
    INFO(c.k.name());
    for (int k = 1; k <= c.n; ++k) CHECK_THAT(last.mu.weight_at(k), WithinAbs(ref[static_cast<std::size_t>(k - 1)], 1e-9));
    CHECK_THAT(last.lambda, WithinRel(ref[static_cast<std::size_t>(c.n)], 1e-8));
  }
}

TEST_CASE("pure leak fixture has the logistic lambda") {
  // K = 0, phi = 1: dmu(1) = -lambda mu(1), dlambda = lambda mu(1), lambda0 = 1.
  const auto mu0 = DiscreteMeasure::make({{1.0, 1.0}, {5.0, 1.0}});
  const auto tr = solve_truncated(mu0, Kernel::constant(0.0), SublinearFn::constant(1.0), Truncation::interval(2.0), 2.0,
                                  tight({0.5, 1.0, 2.0}));
  for (const auto& s : tr.samples) {
    const double lam = 2.0 / (1.0 + std::exp(-2.0 * s.t));
    CHECK_THAT(s.lambda, WithinAbs(lam, 1e-9));
    CHECK_THAT(s.mu.weight_at(1.0), WithinAbs(2.0 - lam, 1e-9));
  }
}

TEST_CASE("lambda ODE integrates along the solution when nothing leaks") {
  // K = 0: lambda' = lambda <phi^2, mu>.
  const auto mu0 = DiscreteMeasure::make({{1.0, 1.0}, {5.0, 0.5}});
  const auto tr = solve_truncated(mu0, Kernel::constant(0.0), SublinearFn::constant(1.0), Truncation::interval(2.0), 1.0,
                                  [] {
                                    SolveOptions o = tight({});
                                    o.samples = 400;
                                    return o;
                                  }());
  const auto lam = integrate_lambda_ode(tr, 0.5);
  for (std::size_t i = 0; i < lam.size(); ++i) CHECK_THAT(lam[i], WithinRel(tr.samples[i].lambda, 1e-5));
  CHECK(integrate_lambda_ode(tr, 0.0).back() == 0.0);
}

TEST_CASE("Picard and RK agree on a small fixture") {
  const auto mu0 = DiscreteMeasure::make({{1.0, 0.7}, {2.0, 0.3}});
  auto opt = tight({0.5, 1.0, 2.0});
  const auto rk = solve_truncated(mu0, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(8), 2.0, opt);
  opt.method = SolveOptions::Method::Picard;
  const auto pc = solve_truncated(mu0, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(8), 2.0, opt);
  REQUIRE(rk.samples.size() == pc.samples.size());
  for (std::size_t s = 0; s < rk.samples.size(); ++s) {
    CHECK(total_variation(rk.samples[s].mu, pc.samples[s].mu) < 1e-9);
    CHECK_THAT(pc.samples[s].lambda, WithinAbs(rk.samples[s].lambda, 1e-9));
  }
  CHECK(pc.meta.picard_subintervals > 0);
}

TEST_CASE("Picard refuses fixtures that need too many restarts") {
  auto opt = tight({});
  opt.method = SolveOptions::Method::Picard;
  opt.picard_max_subintervals = 10;
  CHECK_THROWS_AS(solve_truncated(kDelta1, Kernel::multiplicative(), SublinearFn::identity(), Truncation::interval(200),
                                  1.5, opt),
                  InvalidArgument);
}

TEST_CASE("integrating-factor iterates stay non-negative and agree with RK") {
  const auto mu0 = DiscreteMeasure::make({{1.0, 1.0}});
  const auto k = Kernel::constant(1.0);
  const TruncatedSystem sys(mu0, k, k.phi(), Truncation::interval(6), 0.0);
  const auto r = detail::integrating_factor_picard(sys, 1.0, 64);
  CHECK(r.min_iterate_weight >= 0.0);
  const auto rk = solve_truncated(mu0, k, k.phi(), Truncation::interval(6), 1.0, tight({1.0}));
  const auto mu = sys.measure(r.y);
  CHECK(total_variation(mu, rk.samples.back().mu) < 1e-6);
}

TEST_CASE("solutions stay non-negative and phi-mass is non-increasing (property)") {
  CounterRng rng(21);
  const Kernel ks[] = {Kernel::constant(1.0), Kernel::additive(), Kernel::multiplicative(), Kernel::brownian()};
  for (int r = 0; r < 12; ++r) {
    std::vector<Atom> atoms;
    for (int i = 0; i < 3; ++i) atoms.push_back({1.0 + std::floor(4 * rng.uniform()), 0.2 + 0.3 * rng.uniform()});
    const auto mu0 = DiscreteMeasure::make(atoms);
    const auto& k = ks[r % 4];
    const auto tr = solve_truncated(mu0, k, k.phi(), Truncation::interval(16), 1.0, tight({}));
    const auto rep = conservation_report(tr, k.phi());
    INFO(k.name());
    CHECK(rep.phi_monotone);
    for (const auto& s : tr.samples) {
      CHECK(s.lambda >= 0.0);
      for (const auto& a : s.mu.atoms()) CHECK(a.weight >= 0.0);
    }
    // Total mass inside B plus mass lost never exceeds the initial mass.
    CHECK(tr.diagnostics.back().mass <= tr.diagnostics.front().mass * (1 + 1e-10));
  }
}

TEST_CASE("nested truncations are monotone") {
  const std::vector<Truncation> bs = {Truncation::interval(8), Truncation::interval(16), Truncation::interval(32)};
  SolveOptions o;
  o.samples = 40;
  const auto ex = solve_exhaustion(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), bs, 4.0, o);
  CHECK(ex.monotone);
  CHECK(ex.max_atom_violation <= 1e-8);
  CHECK(ex.max_phi_violation <= 1e-8);
  REQUIRE(ex.cauchy_gap.size() == ex.runs.front().samples.size());
  CHECK_THROWS_AS(solve_exhaustion(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0),
                                   {Truncation::interval(16), Truncation::interval(8)}, 1.0),
                  InvalidArgument);
}

TEST_CASE("gelation fixture: monitor bound and lambda onset") {
  SolveOptions o = tight({});
  o.samples = 300;
  const auto tr = solve_truncated(kDelta1, Kernel::multiplicative(), SublinearFn::identity(), Truncation::interval(200),
                                  1.5, o);
  CHECK(tr.meta.horizon == 1.0);
  CHECK(tr.meta.monitor_max_ratio <= 1.0 + 1e-6);
  const auto rep = conservation_report(tr, SublinearFn::identity(), 1e-4);
  REQUIRE(rep.lambda_positive_after.has_value());
  // The onset is reported, not asserted here; see the acceptance run.
  CHECK(*rep.lambda_positive_after > 0.5);
  CHECK(*rep.lambda_positive_after < 1.2);
}

TEST_CASE("solver argument errors") {
  CHECK_THROWS_AS(solve_truncated(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::all(), 1.0),
                  InvalidArgument);
  CHECK_THROWS_AS(solve_truncated(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(4), -1.0),
                  InvalidArgument);
  SolveOptions o;
  o.max_atoms = 10;
  CHECK_THROWS_AS(solve_truncated(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(50), 1.0, o),
                  NumericalFailure);
}

TEST_CASE("trajectory export is long format") {
  const auto tr = solve_truncated(kDelta1, Kernel::constant(1.0), SublinearFn::constant(1.0), Truncation::interval(3), 1.0,
                                  tight({1.0}));
  const auto csv = trajectory_csv(tr);
  CHECK(csv.rfind("t,mass,weight\n", 0) == 0);
  CHECK(diagnostics_csv(tr.diagnostics).rfind("t,mass,phi1,phi2,lambda\n", 0) == 0);
  const auto j = to_json(tr.meta);
  CHECK(j.at("method") == "rk");
}

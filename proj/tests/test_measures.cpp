#include <catch_amalgamated.hpp>

#include <coagkit/measures.hpp>
#include <coagkit/rng.hpp>

#include <cmath>
#include <vector>

using namespace coagkit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DiscreteMeasure random_measure(CounterRng& rng, int atoms, double eps = 0.0) {
  std::vector<Atom> a;
  for (int i = 0; i < atoms; ++i) a.push_back({0.1 + 20 * rng.uniform(), rng.uniform()});
  return DiscreteMeasure::make(a, eps);
}

} // namespace

TEST_CASE("atoms are sorted and coincident masses are merged") {
  const auto mu = DiscreteMeasure::make({{3.0, 1.0}, {1.0, 2.0}, {3.0, 0.5}, {2.0, 0.0}});
  REQUIRE(mu.size() == 3);
  CHECK(mu.atoms()[0].mass == 1.0);
  CHECK(mu.atoms()[1].mass == 2.0);
  CHECK(mu.atoms()[2].weight == 1.5);
  CHECK(mu.norm() == 3.5);
  CHECK(mu.weight_at(3.0) == 1.5);
  CHECK(mu.weight_at(2.5) == 0.0);
}

TEST_CASE("epsilon merge keeps the weighted mean mass") {
  const auto mu = DiscreteMeasure::make({{1.0, 1.0}, {1.0 + 1e-10, 3.0}, {5.0, 1.0}}, 1e-9);
  REQUIRE(mu.size() == 2);
  CHECK_THAT(mu.atoms()[0].mass, WithinAbs(1.0 + 0.75e-10, 1e-15));
  CHECK(mu.atoms()[0].weight == 4.0);
}

TEST_CASE("invalid atoms are rejected with their index") {
  try {
    DiscreteMeasure::make({{1.0, 1.0}, {-2.0, 1.0}});
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    REQUIRE(e.index().has_value());
    CHECK(*e.index() == 1);
  }
  CHECK_THROWS_AS(DiscreteMeasure::make({{1.0, -1.0}}), InvalidArgument);
  CHECK_THROWS_AS(DiscreteMeasure::make({{NAN, 1.0}}), InvalidArgument);
  CHECK_THROWS_AS(DiscreteMeasure::make({{1.0, 1.0}}, -1.0), InvalidArgument);
}

TEST_CASE("moments and reweighting") {
  const auto mu = DiscreteMeasure::make({{1.0, 2.0}, {4.0, 0.5}});
  CHECK(moment(mu, [](double x) { return x; }) == 4.0);
  CHECK(moment(mu, [](double) { return 1.0; }) == 2.5);
  const auto phi = SublinearFn::power(0.5);
  const auto pm = reweight(mu, [&](double x) { return phi(x); });
  CHECK_THAT(pm.weight_at(4.0), WithinRel(1.0, 1e-15));
  CHECK_THROWS_AS(moment(mu, [](double) { return INFINITY; }), NumericalFailure);
}

TEST_CASE("sublinear functions") {
  const auto id = SublinearFn::identity();
  CHECK(id(3.0) == 3.0);
  const auto b = SublinearFn::brownian_dominator();
  CHECK_THAT(b(1.0), WithinRel(4.0, 1e-15));
  CHECK(SublinearFn::max_const(2.0)(1.0) == 2.0);
  CHECK(SublinearFn::max_const(2.0)(5.0) == 5.0);
  CHECK_THROWS_AS(SublinearFn::power(1.5), InvalidArgument);
  CHECK_THROWS_AS(SublinearFn::constant(0.0), InvalidArgument);
  // f(x) = x^2 sampled at knots is superlinear
  CHECK_THROWS_AS(SublinearFn::table({{1.0, 1.0}, {2.0, 4.0}}), InvalidArgument);
  const auto t = SublinearFn::table({{1.0, 2.0}, {3.0, 3.0}});
  CHECK(t(0.5) == 1.0);
  CHECK(t(2.0) == 2.5);
  CHECK(t(10.0) == 3.0);
}

TEST_CASE("sublinearity holds for every representation (property)") {
  CounterRng rng(11);
  std::vector<SublinearFn> fs = {SublinearFn::identity(),
                                 SublinearFn::constant(2.0),
                                 SublinearFn::power(0.3, 2.0),
                                 SublinearFn::brownian_dominator(),
                                 SublinearFn::max_const(1.5),
                                 SublinearFn::table({{0.5, 1.0}, {2.0, 2.0}, {8.0, 3.0}}),
                                 truncate_sublinear(SublinearFn::identity(), 4.0)};
  for (const auto& f : fs)
    for (int i = 0; i < 2000; ++i) {
      const double x = std::exp(-5 + 10 * rng.uniform());
      const double a = 1 + 10 * rng.uniform();
      REQUIRE(f(a * x) <= a * f(x) * (1 + 1e-12) + 1e-300);
      REQUIRE(f(x) >= 0);
    }
}

TEST_CASE("truncated phi increases to phi") {
  const auto phi = SublinearFn::power(0.5);
  for (double x : {0.01, 0.3, 1.0, 7.0, 50.0}) {
    double prev = 0;
    for (double n : {1.0, 2.0, 8.0, 64.0, 1024.0}) {
      const double v = truncate_sublinear(phi, n)(x);
      CHECK(v >= prev - 1e-15);
      CHECK(v <= phi(x) + 1e-15);
      prev = v;
    }
    CHECK_THAT(prev, WithinRel(phi(x), 1e-12));
  }
}

TEST_CASE("total variation is a metric on random measures (property)") {
  CounterRng rng(5);
  for (int r = 0; r < 200; ++r) {
    const auto a = random_measure(rng, 5), b = random_measure(rng, 5), c = random_measure(rng, 5);
    CHECK(total_variation(a, a) == 0.0);
    CHECK_THAT(total_variation(a, b), WithinAbs(total_variation(b, a), 1e-14));
    CHECK(total_variation(a, c) <= total_variation(a, b) + total_variation(b, c) + 1e-12);
  }
  CHECK_THROWS_AS(total_variation(DiscreteMeasure::make({{1.0, 1.0}}, 0.0), DiscreteMeasure::make({{1.0, 1.0}}, 0.1)),
                  InvalidArgument);
}

TEST_CASE("weak dictionary hats are bounded 1-Lipschitz with weights 2^-k") {
  const WeakMetricDict d(8.0, 4);
  REQUIRE(d.hats().size() == 1 + 3 + 7 + 15);
  double w = 0.5;
  for (const auto& h : d.hats()) {
    CHECK(h.weight == w);
    w /= 2;
    CHECK(h.height <= 1.0);
    CHECK(h.height / h.half_width <= 1.0 + 1e-15);
    CHECK(h(h.center) == h.height);
    CHECK(h(h.center + h.half_width) == 0.0);
  }
  CHECK_THROWS_AS(WeakMetricDict(8.0, 0), InvalidArgument);
  CHECK_THROWS_AS(WeakMetricDict(-1.0, 3), InvalidArgument);
}

TEST_CASE("d0 is a bounded pseudometric dominated by total variation (property)") {
  const WeakMetricDict d(25.0, 6);
  CounterRng rng(9);
  for (int r = 0; r < 100; ++r) {
    const auto a = random_measure(rng, 6), b = random_measure(rng, 6), c = random_measure(rng, 6);
    CHECK(weak_distance_d0(a, a, d) == 0.0);
    CHECK_THAT(weak_distance_d0(a, b, d), WithinAbs(weak_distance_d0(b, a, d), 1e-15));
    CHECK(weak_distance_d0(a, c, d) <= weak_distance_d0(a, b, d) + weak_distance_d0(b, c, d) + 1e-14);
    CHECK(weak_distance_d0(a, b, d) <= total_variation(a, b) + 1e-14);
    CHECK(weak_distance_d0(a, b, d) <= 1.0);
  }
  // A small shift of an atom is a small d0 change but a full TV change.
  const auto p = DiscreteMeasure::make({{5.0, 1.0}}), q = DiscreteMeasure::make({{5.001, 1.0}});
  CHECK(weak_distance_d0(p, q, d) < 1e-3);
  CHECK(total_variation(p, q) == 2.0);
  // Atoms beyond x_max are invisible.
  CHECK(weak_distance_d0(DiscreteMeasure::make({{30.0, 1.0}}), DiscreteMeasure{}, d) == 0.0);
}

TEST_CASE("CSV and JSON round trips") {
  CounterRng rng(3);
  const auto mu = random_measure(rng, 7, 1e-6);
  const auto back = measure_from_csv(to_csv(mu), 1e-6);
  CHECK(back == mu);
  CHECK(measure_from_json(to_json(mu)) == mu);
  CHECK_THROWS_AS(measure_from_csv("m,w\n1,2\n"), InvalidArgument);
  CHECK_THROWS_AS(measure_from_csv("mass,weight\n1;2\n"), InvalidArgument);
  for (const auto& f : {SublinearFn::identity(), SublinearFn::max_const(2.0), SublinearFn::table({{1.0, 1.0}, {2.0, 1.5}}),
                        truncate_sublinear(SublinearFn::power(0.5), 3.0)}) {
    const auto g = SublinearFn::from_json(f.to_json());
    for (double x : {0.1, 1.0, 2.5, 9.0}) CHECK(g(x) == f(x));
  }
}

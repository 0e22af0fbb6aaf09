#include <catch_amalgamated.hpp>

#include <coagkit/coalescent.hpp>
#include <coagkit/fenwick.hpp>

#include "oracles.hpp"

#include <cmath>
#include <map>

using namespace coagkit;
using Catch::Matchers::WithinAbs;

TEST_CASE("Fenwick tree sums and samples proportionally") {
  Fenwick f({1.0, 0.0, 2.0, 3.0});
  CHECK(f.total() == 6.0);
  CHECK(f.prefix(3) == 3.0);
  CHECK(f.find(0.5) == 0);
  CHECK(f.find(1.0) == 2);  // skips the zero entry
  CHECK(f.find(5.9) == 3);
  f.set(0, 0.0);
  CHECK(f.total() == 5.0);
  CHECK(f.find(0.0) == 2);
}

TEST_CASE("two particles merge after an Exp(K) time") {
  const auto x0 = ParticleSystem::monodisperse(2);
  std::vector<double> times;
  for (std::uint64_t r = 0; r < 4000; ++r) {
    SimOptions o;
    o.stream = r;
    o.record_events = true;
    const auto res = simulate_coalescent(x0, Kernel::constant(2.0), 50.0, 5, o);
    REQUIRE(res.log.size() == 1);
    CHECK(res.final_masses == std::vector<double>{2.0});
    times.push_back(res.log.events[0].t);
  }
  // 1% critical value of the Kolmogorov distribution is 1.63.
  CHECK(oracle::ks_statistic(times, [](double t) { return 1 - std::exp(-2 * t); }) < 1.63);
}

TEST_CASE("mean particle count matches the pure-death chain") {
  const int n0 = 30;
  const double t = 0.1;
  const int reps = 4000;
  double sum = 0, sum2 = 0;
  for (int r = 0; r < reps; ++r) {
    SimOptions o;
    o.stream = static_cast<std::uint64_t>(r);
    o.record_samples = false;
    const auto res = simulate_coalescent(ParticleSystem::monodisperse(n0), Kernel::constant(1.0), t, 9, o);
    const double c = static_cast<double>(res.final_masses.size());
    sum += c;
    sum2 += c * c;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - oracle::constant_kernel_mean_count(n0, t)) < 4 * se);
}

TEST_CASE("rescaled count follows 1/(1+t/2) for the constant kernel") {
  const double n = 1000;
  const int reps = 200;
  const std::vector<double> rescaled = {0.5, 1.0, 2.0};
  std::vector<double> grid;
  for (double t : rescaled) grid.push_back(t / n);
  std::vector<double> sum(grid.size(), 0.0), sum2(grid.size(), 0.0);
  for (int r = 0; r < reps; ++r) {
    SimOptions o;
    o.stream = static_cast<std::uint64_t>(r);
    o.grid = grid;
    const auto res = simulate_coalescent(ParticleSystem::monodisperse(1000), Kernel::constant(1.0), grid.back(), 3, o);
    const auto path = rescale_path(res.samples, n);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& s = path[i];
      REQUIRE_THAT(s.t, WithinAbs(rescaled[i], 1e-12));
      const double c = moment(s.mu, [](double) { return 1.0; });
      sum[i] += c;
      sum2[i] += c * c;
    }
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double mean = sum[i] / reps;
    const double se = std::sqrt((sum2[i] / reps - mean * mean) / reps);
    const double exact = oracle::constant_kernel_mean_count(1000, grid[i], 40000) / n;
    INFO("t=" << rescaled[i]);
    CHECK(std::abs(mean - exact) < 3 * se + 1e-9);
    // finite-n correction is O(1/n)
    CHECK(std::abs(exact - 1 / (1 + rescaled[i] / 2)) < 2e-3);
  }
}

TEST_CASE("truncated chain balances mass and keeps particles in B") {
  auto x0 = ParticleSystem::monodisperse(50);
  x0.masses.push_back(12.0);  // starts outside B
  for (std::uint64_t r = 0; r < 20; ++r) {
    SimOptions o;
    o.stream = r;
    o.record_events = true;
    o.grid = {0.0, 0.01, 0.02, 0.05};
    const auto res = simulate_coupled(x0, Kernel::multiplicative(), Truncation::interval(8), 0.05, 1, o);
    CHECK_THAT(res.final_total_mass, WithinAbs(res.initial_total_mass, 1e-9));
    CHECK(res.samples.front().lambda == 12.0);
    double prev = -1;
    for (const auto& s : res.samples) {
      CHECK(s.lambda >= prev);  // Lambda never decreases for K <= phi phi
      prev = s.lambda;
      for (const auto& a : s.mu.atoms()) CHECK(a.mass <= 8.0);
    }
    CHECK(res.events == res.log.size());
    CHECK(res.merges + res.leak_merges + res.single_leaks == res.events);
  }
}

TEST_CASE("event log export") {
  SimOptions o;
  o.record_events = true;
  const auto res = simulate_coupled(ParticleSystem::monodisperse(20), Kernel::multiplicative(), Truncation::interval(2),
                                    1.0, 4, o);
  const auto csv = event_log_csv(res.log);
  CHECK(csv.rfind("t,kind,m1,m2,m_out\n", 0) == 0);
  std::map<EventKind, int> kinds;
  for (const auto& e : res.log.events) ++kinds[e.kind];
  CHECK(kinds[EventKind::MergeIn] > 0);
  CHECK(kinds[EventKind::MergeLeak] + kinds[EventKind::SingleLeak] > 0);
  const auto scaled = rescale_events(res.log, 20);
  CHECK(scaled.events.front().t == res.log.events.front().t * 20);
}

TEST_CASE("simulation is a pure function of seed and stream") {
  const auto x0 = ParticleSystem::monodisperse(40);
  SimOptions o;
  o.stream = 3;
  const auto a = simulate_coalescent(x0, Kernel::additive(), 0.05, 77, o);
  const auto b = simulate_coalescent(x0, Kernel::additive(), 0.05, 77, o);
  CHECK(a.final_masses == b.final_masses);
  CHECK(a.events == b.events);
  o.stream = 4;
  const auto c = simulate_coalescent(x0, Kernel::additive(), 0.05, 77, o);
  CHECK((c.final_masses != a.final_masses || c.events != a.events));
}

TEST_CASE("coupled family preserves the order between truncations") {
  const std::vector<Truncation> bs = {Truncation::interval(4), Truncation::interval(8), Truncation::interval(16)};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SimOptions o;
    o.grid = {0.01, 0.02, 0.04};
    const auto fam = simulate_coupled_family(ParticleSystem::monodisperse(50), Kernel::multiplicative(), bs, 0.04, seed, o);
    CHECK(fam.checks > 0);
    CHECK(fam.min_order_gap >= -1e-9);
    REQUIRE(fam.paths.size() == 3);
    for (std::size_t l = 1; l < 3; ++l)
      for (std::size_t s = 0; s < fam.paths[l].samples.size(); ++s) {
        const auto& small = fam.paths[l - 1].samples[s].mu;
        const auto& big = fam.paths[l].samples[s].mu;
        for (const auto& a : small.atoms()) CHECK(a.weight <= big.weight_at(a.mass) + 1e-12);
      }
  }
}

TEST_CASE("coupled family argument checks") {
  const auto x0 = ParticleSystem::monodisperse(4);
  CHECK_THROWS_AS(simulate_coupled_family(x0, Kernel::constant(1.0), {}, 1.0, 0), InvalidArgument);
  CHECK_THROWS_AS(
      simulate_coupled_family(x0, Kernel::constant(1.0), {Truncation::interval(8), Truncation::interval(4)}, 1.0, 0),
      InvalidArgument);
}

TEST_CASE("pair measure and exact drift") {
  const auto mu = DiscreteMeasure::make({{1.0, 3.0}, {2.0, 2.0}});
  auto all = [](double) { return true; };
  CHECK(pair_measure(mu, 1.0, all, all) == 20.0);  // ordered pairs of 5 distinct particles
  CHECK(pair_measure(mu, 1.0, [](double x) { return x == 1.0; }, [](double x) { return x == 2.0; }) == 6.0);
  // f = 1 counts particles: each merge removes one.
  CHECK(drift_L1(mu, 0.0, Kernel::constant(1.0), Truncation::all(), [](double) { return 1.0; }) == -10.0);
  // f = x is conserved without truncation.
  CHECK_THAT(drift_L1(mu, 0.0, Kernel::additive(), Truncation::all(), [](double x) { return x; }), WithinAbs(0.0, 1e-12));
  // With B = (0, 2] and a = 1, <(phi,1), .> has non-positive drift.
  const auto k = Kernel::multiplicative();
  CHECK(drift_L1(mu, 0.7, k, Truncation::interval(2), [&](double x) { return k.phi()(x); }, 1.0) <= 1e-12);
  CHECK(quadratic_Q1(mu, 0.0, Kernel::constant(1.0), Truncation::all(), [](double) { return 1.0; }) == 10.0);
}

TEST_CASE("generator consistency on small fixtures") {
  const ParticleSystem x0{{1.0, 1.0, 2.0, 3.0, 5.0}};
  auto sq = [](double x) { return x * x; };
  for (const auto& k : {Kernel::constant(1.0), Kernel::additive(), Kernel::multiplicative()}) {
    double s1 = 0, s2 = 0;
    for (double m : x0.masses) {
      s1 += k.phi()(m);
      s2 += k.phi()(m) * k.phi()(m);
    }
    const double rate = 0.5 * (s1 * s1 - s2);
    const auto chk = generator_consistency(k, x0, sq, 40000, 1e-2 / rate, 13);
    INFO(k.name() << " z=" << chk.z);
    CHECK(std::abs(chk.z) < 4);
    CHECK(chk.exact > 0);
  }
  CHECK_THROWS_AS(generator_consistency(Kernel::constant(1.0), x0, sq, 1, 0.0, 0), InvalidArgument);
}

TEST_CASE("rescaling rejects factors below one") {
  CHECK_THROWS_AS(rescale_path({}, 0.5), InvalidArgument);
  CHECK_THROWS_AS(rescale_events({}, 0.0), InvalidArgument);
}

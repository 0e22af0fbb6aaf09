#include <catch_amalgamated.hpp>

#include <coagkit/rng.hpp>

#include <set>

using coagkit::CounterRng;
using coagkit::Philox4x32;

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  CHECK(Philox4x32::block(C{0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::block(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::block(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("uniforms lie in the open unit interval and have the right mean") {
  CounterRng rng(42, 3);
  double s = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    s += u;
  }
  // sd of the mean is sqrt(1/12/n) ~ 6.5e-4
  CHECK(std::abs(s / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
}

TEST_CASE("streams are reproducible and distinct") {
  CounterRng a(7, 1), b(7, 1), c(7, 2), d(8, 1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    CHECK(x == b());
    seen.insert(x);
    seen.insert(c());
    seen.insert(d());
  }
  CHECK(seen.size() == 3000);
}

TEST_CASE("uniform_at is a pure function of its coordinates") {
  CHECK(coagkit::uniform_at(5, 1, 2, 3, 4) == coagkit::uniform_at(5, 1, 2, 3, 4));
  CHECK(coagkit::uniform_at(5, 1, 2, 3, 4) != coagkit::uniform_at(5, 1, 2, 3, 5));
  CHECK(coagkit::uniform_at(5, 1, 2, 3, 4) != coagkit::uniform_at(6, 1, 2, 3, 4));
}

TEST_CASE("exponential variates have mean 1/rate") {
  CounterRng rng(1);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s += rng.exponential(4.0);
  CHECK(std::abs(s / n - 0.25) < 4 * 0.25 / std::sqrt(n));
}

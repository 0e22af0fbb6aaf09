#include <catch_amalgamated.hpp>

#include <coagkit/kernels.hpp>

#include <cmath>

using namespace coagkit;
using Catch::Matchers::WithinRel;

TEST_CASE("built-in kernels evaluate as defined") {
  CHECK(Kernel::constant(2.5)(1.0, 7.0) == 2.5);
  CHECK(Kernel::additive()(2.0, 3.0) == 5.0);
  CHECK(Kernel::multiplicative()(2.0, 3.0) == 6.0);
  const double x = 2.0, y = 5.0;
  const double br = (std::cbrt(x) + std::cbrt(y)) * (1 / std::cbrt(x) + 1 / std::cbrt(y));
  CHECK_THAT(Kernel::brownian()(x, y), WithinRel(br, 1e-14));
  CHECK_THROWS_AS(Kernel::constant(1.0)(0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(Kernel::constant(-1.0), InvalidArgument);
}

TEST_CASE("built-in kernels are symmetric (property)") {
  for (const auto& k : {Kernel::constant(1.0), Kernel::additive(), Kernel::multiplicative(), Kernel::brownian()})
    for (double x : {0.01, 0.5, 3.0, 80.0})
      for (double y : {0.02, 1.0, 9.0})
        CHECK(k(x, y) == k(y, x));
}

TEST_CASE("built-in kernels are dominated by their phi with margin 1") {
  for (const auto& k : {Kernel::constant(1.0), Kernel::constant(4.0), Kernel::additive(), Kernel::multiplicative(),
                        Kernel::brownian()}) {
    const auto rep = verify_domination(k, 40000, 1e-4, 1e4);
    INFO(k.name() << " ratio " << rep.max_ratio);
    CHECK(rep.passed);
    CHECK(rep.max_ratio <= 1.0 + 1e-12);
    CHECK(rep.pairs_checked >= 40000);
  }
}

TEST_CASE("the Brownian ratio approaches but does not exceed its bound") {
  const auto rep = verify_domination(Kernel::brownian(), 90000, 1e-6, 1e6);
  CHECK(rep.passed);
  CHECK(rep.max_ratio > 0.2);
}

TEST_CASE("a wrong dominator is reported with the worst pair") {
  const auto k = Kernel::multiplicative().with_phi(SublinearFn::power(0.5), 1.0);
  const auto rep = verify_domination(k, 10000, 1e-2, 1e2);
  CHECK_FALSE(rep.passed);
  CHECK_THAT(rep.max_ratio, WithinRel(100.0, 1e-9));
  CHECK(rep.worst_pair.first == rep.worst_pair.second);
}

TEST_CASE("custom kernels are checked at registration") {
  CHECK_NOTHROW(Kernel::custom([](double x, double y) { return std::sqrt(x * y); }, "geo", SublinearFn::power(0.5)));
  CHECK_THROWS_AS(Kernel::custom([](double x, double y) { return x * x + y * y; }, "sq", SublinearFn::identity()),
                  InvalidArgument);
  CHECK_THROWS_AS(Kernel::custom({}, "none", SublinearFn::identity()), InvalidArgument);
}

TEST_CASE("index chain kernel couples consecutive classes only") {
  const auto k = Kernel::index_chain(8.0, {1.5, 2.25, 3.375, 5.0625});
  CHECK(k.chain_class(2.25) == 2);
  CHECK(k.chain_class(2.0) == 0);
  CHECK(k(1.5, 2.25) == 8.0);
  CHECK(k(3.375, 2.25) == 64.0);
  CHECK(k(1.5, 3.375) == 0.0);
  CHECK(k(1.5, 1.5) == 0.0);
  CHECK(k(1.0, 2.25) == 0.0);
  // margin covers every rung: 8^3 / (3.375 * 5.0625)
  CHECK_THAT(k.margin(), WithinRel(512.0 / (3.375 * 5.0625), 1e-14));
  CHECK(verify_domination(k, 100).passed);
  CHECK_THROWS_AS(Kernel::index_chain(8.0, {2.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(Kernel::index_chain(8.0, std::vector<double>(301, 1.0)), InvalidArgument);
  CHECK_THROWS_AS(Kernel::constant(1.0).chain_class(1.0), InvalidArgument);
}

TEST_CASE("kernel JSON round trip") {
  for (const auto& k : {Kernel::constant(3.0), Kernel::additive(), Kernel::multiplicative(), Kernel::brownian(),
                        Kernel::index_chain(8.0, {1.0, 2.0, 4.0})}) {
    const auto back = Kernel::from_json(k.to_json());
    CHECK(back.name() == k.name());
    CHECK(back.margin() == k.margin());
    for (double x : {1.0, 2.0, 3.0})
      for (double y : {1.0, 2.0, 4.0}) CHECK(back(x, y) == k(x, y));
  }
  const auto gen = Kernel::from_json({{"type", "index_chain"}, {"n_classes", 4}, {"mass_ratio", 1.5}});
  CHECK_THAT(gen.chain_class(1.5 * 1.5 * 1.5), Catch::Matchers::WithinAbs(3, 0));
  CHECK_THROWS_AS(Kernel::from_json({{"type", "nope"}}), InvalidArgument);
}

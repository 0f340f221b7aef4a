#include <doctest.h>

#include <cmath>
#include <vector>

#include "sllab/numerics.hpp"
#include "sllab/rng.hpp"

using namespace sllab;

TEST_CASE("philox known answer") {
  // Philox4x32-10, key 0, counter 0 (Random123 test vector).
  Philox g(0);
  const std::uint64_t a = g.next_u64();
  const std::uint64_t b = g.next_u64();
  CHECK(a == (0x6627e8d5ULL | (0xe169c58dULL << 32)));
  CHECK(b == (0xbc57ac4cULL | (0x9b00dbd8ULL << 32)));
}

TEST_CASE("streams are reproducible and distinct") {
  Philox a(stream_key(7, 3)), b(stream_key(7, 3)), c(stream_key(7, 4));
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    CHECK(x == b.normal());
    CHECK(x != c.normal());
  }
}

TEST_CASE("uniform and normal moments") {
  Philox g(42);
  std::vector<double> u(200000), z(200000);
  for (auto& x : u) x = g.uniform();
  for (auto& x : z) x = g.normal();
  for (double x : u) REQUIRE((x > 0.0 && x < 1.0));
  const MeanSe mu = mean_se(u), mz = mean_se(z);
  CHECK(std::abs(mu.mean - 0.5) < 4.0 * mu.se);
  CHECK(std::abs(mz.mean) < 4.0 * mz.se);
  std::vector<double> z2(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) z2[i] = z[i] * z[i];
  const MeanSe m2 = mean_se(z2);
  CHECK(std::abs(m2.mean - 1.0) < 4.0 * m2.se);
}

TEST_CASE("float formatting round-trips") {
  for (double x : {0.1, 1.0 / 3.0, 2.5e-300, -8011.090354888959}) {
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.15) == "0.15");
}

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sllab/error.hpp"
#include "sllab/heatflow.hpp"
#include "sllab/rng.hpp"

using namespace sllab;

namespace {

// Unit-variance logistic factor; its Fisher information is pi^2 / 9.
Factor1D logistic_factor() {
  const double sg = std::sqrt(3.0) / std::numbers::pi;
  Factor1D f;
  f.name = "logistic";
  f.log_normalizer = std::log(sg);
  f.log_density = [sg](double x) {
    const double z = std::abs(x) / sg;
    return -z - 2.0 * std::log1p(std::exp(-z));
  };
  f.d1 = [sg](double x) { return -std::tanh(x / (2 * sg)) / sg; };
  f.d2 = [sg](double x) {
    const double c = std::cosh(x / (2 * sg));
    return -1.0 / (2 * sg * sg * c * c);
  };
  f.sample = [sg](Philox& r) {
    const double u = r.uniform();
    return sg * std::log(u / (1 - u));
  };
  f.window_lo = -22.0;
  f.window_hi = 22.0;
  f.spectral_lo = -20.0;
  f.spectral_hi = 20.0;
  f.smooth = true;
  return f;
}

double grid_moment(const SmoothedMeasure& m, int k) {
  std::vector<double> f(m.rho_s.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::pow(m.grid.axes[0].node(i), k);
  return integrate(m, f);
}

}  // namespace

TEST_CASE("smoothed gaussian is N(0, 1 + s)") {
  const SmoothedMeasure m = smooth(make_gaussian(1), 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rho_s.size(); ++i) {
    const double y = m.grid.axes[0].node(i);
    worst = std::max(worst, std::abs(m.rho_s[i] - std::exp(-y * y / 4) / std::sqrt(4 * std::numbers::pi)));
  }
  CHECK(worst < 1e-6);
  CHECK(m.mass_defect < 1e-6);
}

TEST_CASE("smoothed moments add the heat-kernel variance") {
  for (const auto& key : measure_keys()) {
    CAPTURE(key);
    const SmoothedMeasure m = smooth(make_measure(key, 1), 0.25);
    CHECK(grid_moment(m, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(grid_moment(m, 2) == doctest::Approx(1.25).epsilon(1e-4));
    for (std::size_t i = 1; i + 1 < m.rho_s.size(); ++i) CHECK(m.rho_s[i] > 0.0);
  }
  const SmoothedMeasure m2 = smooth(make_uniform_cube(2), 0.5);
  CHECK(m2.grid.dim() == 2);
  CHECK_THROWS_AS(smooth(make_gaussian(3), 0.5), LabError);
  CHECK_THROWS_AS(smooth(make_gaussian(1), 0.0), LabError);
}

TEST_CASE("heat semigroup on polynomials") {
  const SmoothedMeasure m = smooth(make_gaussian(1), 0.5);
  const GridFunction one = apply_P(tabulate(m.grid, polynomial({1.0})), 0.5);
  const GridFunction x = apply_P(tabulate(m.grid, polynomial({0.0, 1.0})), 0.5);
  const GridFunction x2 = apply_P(tabulate(m.grid, polynomial({0.0, 0.0, 1.0})), 0.5);
  for (std::size_t i = 0; i < one.values.size(); ++i) {
    if (!one.mask.empty() && !one.mask[i]) continue;
    const double y = m.grid.axes[0].node(i);
    CHECK(one.values[i] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(x.values[i] == doctest::Approx(y).epsilon(1e-9).scale(1.0));
    CHECK(x2.values[i] == doctest::Approx(y * y + 0.5).epsilon(1e-9));
  }
}

TEST_CASE("Q_s on the gaussian") {
  const SmoothedMeasure m = smooth(make_gaussian(1), 1.0);
  CHECK(apply_Q_at(polynomial({0.0, 1.0}), m, 1.3) == doctest::Approx(0.65).epsilon(1e-10));
  CHECK(apply_Q_derivative_at(polynomial({0.0, 1.0}), m, 1.3) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(apply_Q_at(polynomial({1.0}), m, -2.0) == doctest::Approx(1.0).epsilon(1e-14));
  const GridFunction q = apply_Q(polynomial({1.0}), m);
  for (double v : q.values) {
    if (std::isfinite(v)) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("adjointness on random polynomials") {
  Philox rng(31);
  for (const auto& key : measure_keys()) {
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<double> cu(4), cv(3);
      for (double& c : cu) c = rng.normal();
      for (double& c : cv) c = rng.normal();
      const auto r = adjointness_check(make_measure(key, 1), polynomial(cu), polynomial(cv), 0.7);
      CAPTURE(key);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("variance identity") {
  const auto g = variance_identity_check(make_gaussian(3), 1.0);
  CHECK(g.lhs == doctest::Approx(24.0).epsilon(1e-12));
  CHECK(g.rhs == doctest::Approx(24.0).epsilon(1e-10));
  // Closed forms from E x^4: per coordinate Var(y^2) = E x^4 - 1 + 4s + 2s^2.
  const auto c = variance_identity_check(make_uniform_cube(2), 0.5);
  CHECK(c.lhs == doctest::Approx(2 * (0.8 + 2.0 + 0.5)).epsilon(1e-10));
  CHECK(c.pass);
  const auto e = variance_identity_check(make_product_exponential(2), 0.5);
  CHECK(e.lhs == doctest::Approx(2 * (8.0 + 2.0 + 0.5)).epsilon(1e-10));
  CHECK(e.pass);
}

TEST_CASE("hessian window and fisher information") {
  const auto g = hessian_window_check(make_gaussian(1), 1.0);
  CHECK(g.pass);
  // Far tails see the truncated base quadrature; the window still holds there.
  CHECK(g.min_hessian >= -1.0 - 1e-6);
  CHECK(g.max_hessian <= 1e-6);
  {
    const auto m = smooth(make_gaussian(1), 1.0);
    const auto& l = m.log_rho_s;
    const double h = m.grid.axes[0].h;
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < l.size(); ++i) {
      if (std::abs(m.grid.axes[0].node(i)) > 6.0) continue;
      worst = std::max(worst, std::abs((l[i + 1] - 2 * l[i] + l[i - 1]) / (h * h) + 0.5));
    }
    CHECK(worst < 1e-4);
  }
  REQUIRE(g.theta_applicable);
  for (double v : g.theta_values) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(hessian_window_check(make_uniform_cube(1), 0.1).window_pass);
  CHECK_FALSE(hessian_window_check(make_product_exponential(1), 0.5).theta_applicable);

  const auto l = hessian_window_check(make_product(logistic_factor(), 1, "logistic"), 0.5);
  CHECK(l.pass);
  REQUIRE(l.theta_applicable);
  for (double v : l.theta_values) {
    CHECK(v == doctest::Approx(std::numbers::pi * std::numbers::pi / 9).epsilon(1e-8));
  }
}

TEST_CASE("gradient contraction") {
  const auto lin = gradient_contraction_check(make_gaussian(1), polynomial({0.0, 1.0}), 1.0);
  CHECK(lin.lhs == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(lin.rhs == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(lin.pass);
  Philox rng(5);
  for (const auto& key : measure_keys()) {
    for (double s : {0.1, 1.0}) {
      for (int rep = 0; rep < 4; ++rep) {
        std::vector<double> c(1 + static_cast<int>(rng.uniform() * 5));
        for (double& v : c) v = rng.normal();
        const auto r = gradient_contraction_check(make_measure(key, 1),
                                                  poly_gaussian_bump(c, 0.8 + rng.uniform()), s);
        CAPTURE(key);
        CAPTURE(s);
        CHECK(r.pass);
      }
    }
  }
}

TEST_CASE("bochner and Gamma_2 on N(0, 2)") {
  const BochnerReport r = bochner_gamma2_check(smooth(make_gaussian(1), 1.0), polynomial({0.0, 0.0, 1.0}));
  CHECK(r.bochner.lhs == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(r.bochner.rhs == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(r.gamma2.rhs == doctest::Approx(12.0).epsilon(1e-6));
  CHECK(r.pass);
}

TEST_CASE("bochner family at 4001 nodes") {
  Resolution res;
  res.nodes = 4001;
  const TestFunction u = poly_compact_bump({0.0, 0.0, 0.0, 1.0}, 3.0);
  for (const auto& key : measure_keys()) {
    const BochnerReport r = bochner_gamma2_check(smooth(make_measure(key, 1), 1.0, res), u);
    CAPTURE(key);
    CHECK(r.pass);
    for (double f : r.refinement) CHECK((f >= 3.0 || !std::isfinite(f) || f == 0.0));
  }
  CHECK_THROWS_AS(bochner_gamma2_check(smooth(make_gaussian(2), 1.0),
                                       tensor_product(u, u)),
                  LabError);
}

TEST_CASE("semigroup correspondence") {
  const StReport g = check_st_correspondence(make_gaussian(1), polynomial({0.0, 1.0}), 1.0, 10000, 3);
  CHECK(g.pass);
  CHECK(g.distributional.rhs == doctest::Approx(0.5).epsilon(1e-6));
  const StReport one = check_st_correspondence(make_uniform_cube(1), polynomial({1.0}), 1.0, 100, 3);
  CHECK(one.distributional.lhs == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(check_st_correspondence(make_product_exponential(1), polynomial({0.0, 0.0, 1.0}), 0.5,
                                10000, 8)
            .pass);
}

TEST_CASE("projection lemma on a grid") {
  Density2D id;
  id.name = "standard";
  id.log_density = [](double x, double y) { return -(x * x + y * y) / 2; };
  const auto r = projection_ulc_check(id, 0.5);
  CHECK(r.pass);
  CHECK(r.min_marginal_curvature == doctest::Approx(1.0).epsilon(1e-5));
  // Claiming t' = 0.6 on the same input fails certification.
  CHECK_THROWS_AS(projection_ulc_check(id, 0.6), LabError);
  // Sigma_11 = 1.5 > 1/(2t'): the marginal misses the window when unchecked.
  Density2D wide;
  wide.name = "wide";
  wide.log_density = [](double x, double y) { return -(x * x / 1.5 + y * y) / 2; };
  CHECK_FALSE(projection_ulc_check(wide, 0.5, {1.0, 0.0}, false).pass);
  for (const auto& d : ulc_test_family(6, 0.5, 77)) {
    CAPTURE(d.name);
    CHECK(projection_ulc_check(d, 0.5, {0.6, 0.8}).pass);
  }
}

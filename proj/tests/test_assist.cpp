#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "sllab/assist.hpp"
#include "sllab/error.hpp"
#include "sllab/rng.hpp"

using namespace sllab;

TEST_CASE("assistant function at D0 = 10, r0 = 2.5") {
  const AssistFn f = build_assist_fn(10.0, 2.5);
  CHECK(f.b >= 1.0 / 20);
  CHECK(f.b <= 1.0 / 5);
  CHECK(eval(f, 2.5) == doctest::Approx(f.b * 6.25).epsilon(1e-14));
  const double v = eval(f, 2.4);
  CHECK(v >= std::exp(-1.0) - 1e-15);
  CHECK(v <= 1.0);
  CHECK(eval(f, 1.0) == doctest::Approx(std::exp(-15.0)).epsilon(1e-14));
  CHECK(eval(f, 2.4, EvalMode::kD1) == doctest::Approx(10.0 / std::exp(1.0)).epsilon(1e-12));
  CHECK(eval(f, 2.4, EvalMode::kD2) == doctest::Approx(100.0 / std::exp(1.0)).epsilon(1e-12));
  CHECK(eval(f, 2.5 - 10.0, EvalMode::kLogValue) == -100.0);
  CHECK(validate(f).ok());
}

TEST_CASE("first derivative integrates to the value, second to the first") {
  const AssistFn f = build_assist_fn(25.0, 2.4);
  using boost::math::quadrature::gauss_kronrod;
  const double a = f.knots[0] - 0.2, b = f.r0 + 0.7;
  // Integrate piecewise so the knots never sit inside a rule.
  std::vector<double> cuts{a, f.knots[0], f.knots[1], f.knots[2], f.knots[3], b};
  double i1 = 0.0, i2 = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    i1 += gauss_kronrod<double, 31>::integrate(
        [&](double r) { return eval(f, r, EvalMode::kD1); }, cuts[k], cuts[k + 1]);
    i2 += gauss_kronrod<double, 31>::integrate(
        [&](double r) { return eval(f, r, EvalMode::kD2); }, cuts[k], cuts[k + 1]);
  }
  CHECK(i1 == doctest::Approx(eval(f, b) - eval(f, a)).epsilon(1e-10));
  CHECK(i2 == doctest::Approx(eval(f, b, EvalMode::kD1) - eval(f, a, EvalMode::kD1)).epsilon(1e-10));
}

TEST_CASE("finite differences of f' match f''") {
  const AssistFn f = build_assist_fn(8.0, 2.5);
  const double h = 1e-6;
  for (int i = 0; i <= 200; ++i) {
    const double r = f.r0 - 1.5 + 2.0 * i / 200.0;
    bool near_knot = false;
    for (double k : f.knots) near_knot |= std::abs(r - k) < 10 * h;
    if (near_knot) continue;
    const double fd = (eval(f, r + h, EvalMode::kD1) - eval(f, r - h, EvalMode::kD1)) / (2 * h);
    const double d2 = eval(f, r, EvalMode::kD2);
    CHECK(fd == doctest::Approx(d2).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("random assistant functions satisfy every invariant") {
  for (int i = 0; i < 200; ++i) {
    Philox rng(stream_key(99, i));
    const double D0 = 4.0 * std::pow(50.0, rng.uniform());
    const double r0 = 7.0 / 3.0 + rng.uniform() / 3.0;
    const AssistValidation v = validate(build_assist_fn(D0, r0));
    CAPTURE(D0);
    CAPTURE(r0);
    CHECK_MESSAGE(v.ok(), v.failures());
    CHECK(v.worst_continuity <= 1e-8);
  }
}

TEST_CASE("schedule at Lambda = 500") {
  const Schedule s = build_schedule(500.0, 1.0);
  CHECK(s.k0 == 2);
  CHECK_FALSE(s.overflow_flag);
  // Independent arithmetic: l_2 = -16 log(2 e^500), l_3 = -16 log|l_2|.
  const double l2 = -16.0 * (500.0 + std::log(2.0));
  CHECK(s.log_t[1] == doctest::Approx(l2).epsilon(1e-14));
  CHECK(s.log_t[1] == doctest::Approx(-8011.1).epsilon(0.1 / 8011.1));
  CHECK(s.log_t[2] == doctest::Approx(-16.0 * std::log(-l2)).epsilon(1e-14));
  CHECK(s.s_seq[0] == 7.0 / 3.0);
  CHECK(s.s_seq[1] == doctest::Approx(7.0 / 3.0 + 1.0 / std::sqrt(-l2)).epsilon(1e-14));
  CHECK(s.s_seq[1] == doctest::Approx(2.3445).epsilon(1e-4));
}

TEST_CASE("schedule grid keeps the squaring and window properties") {
  for (double lam : {10.0, 50.0, 100.0, 500.0, 690.0, 720.0}) {
    for (double C2 : {0.1, 1.0, 10.0}) {
      const Schedule s = build_schedule(lam, C2);
      CAPTURE(lam);
      CAPTURE(C2);
      CHECK(s.overflow_flag == (lam > 700.0));
      for (std::size_t k = 0; k + 1 < s.log_abs_log_t.size(); ++k) {
        CHECK(s.log_abs_log_t[k] >= std::log(2.0) + s.log_abs_log_t[k + 1]);
      }
      double sum = 0.0;
      for (double v : s.s_seq) {
        CHECK(v >= 7.0 / 3.0);
        CHECK(v <= 8.0 / 3.0);
      }
      for (int k = 1; k <= s.k0; ++k) sum += std::exp(-0.5 * s.log_abs_log_t[k]);
      CHECK(sum <= 1.0 / 3.0);
    }
  }
  CHECK_THROWS_AS(build_schedule(-1.0, 1.0), LabError);
  CHECK_THROWS_AS(build_schedule(10.0, 0.0), LabError);
}

TEST_CASE("family members are capped") {
  const auto fam = f_family(build_schedule(500.0, 1.0), 50.0);
  REQUIRE(fam.size() == 2);
  for (const auto& m : fam) {
    CHECK(m.fn.D0 == 50.0);
    CHECK(m.cap_bound);
    CHECK(validate(m.fn).ok());
  }
  CHECK(fam[0].fn.r0 == 7.0 / 3.0);
  CHECK(fam[1].fn.r0 == doctest::Approx(2.3445).epsilon(1e-4));
}

TEST_CASE("F evaluation") {
  const AssistFn f = build_assist_fn(10.0, 2.5);
  CHECK(F_eval(f, {}) == 0.0);
  CHECK(F_eval(f, {2.5, 2.5, 2.5}) == doctest::Approx(3 * f.b * 6.25));
  CHECK(F_eval(f, {0.5, 0.5, 0.5}) == doctest::Approx(3 * eval(f, 0.5)));
  CHECK(F_eval(f, {0.5, 1.0, 2.6}) <= F_eval(f, {0.6, 1.2, 2.6}));
}

TEST_CASE("dyadic bound for h = exp(-s), N = 3") {
  // lhs = int_0^8 min(1, s^{-1/2}) e^{-s/2} ds; on [1, 8] substitute s = v^2.
  using boost::math::quadrature::gauss_kronrod;
  const double lhs =
      gauss_kronrod<double, 61>::integrate([](double s) { return std::exp(-s / 2); }, 0.0, 1.0) +
      gauss_kronrod<double, 61>::integrate([](double v) { return 2.0 * std::exp(-v * v / 2); },
                                           1.0, std::sqrt(8.0));
  CHECK(lhs <= 2.0);
  const DyadicResult r = dyadic_bound_check([](double s) { return std::exp(-s); }, 3);
  CHECK(r.rhs == doctest::Approx(2.0));
  CHECK(r.lhs == doctest::Approx(lhs).epsilon(1e-4));
  CHECK(r.pass);
  CHECK(r.resolved);
}

TEST_CASE("dyadic edge cases") {
  std::vector<double> flat(65, 3.0);
  const DyadicResult r = dyadic_bound_check(flat, 0);
  CHECK(r.lhs == 0.0);
  CHECK(r.pass);
  std::vector<double> bad{1.0, 0.5, 0.7};
  CHECK_THROWS_AS(dyadic_bound_check(bad, 0), LabError);
}

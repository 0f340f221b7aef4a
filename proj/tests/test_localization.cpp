#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <memory>

#include "sllab/error.hpp"
#include "sllab/localization.hpp"

using namespace sllab;
using boost::math::quadrature::gauss_kronrod;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd x(v.size());
  std::size_t i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

// Tilted exponential moments by adaptive quadrature over [-1, 60].
std::array<double, 4> tilted_exp_moments(double t, double theta) {
  auto w = [=](double x) { return std::exp(theta * x - t * x * x / 2 - (x + 1)); };
  auto mom = [&](int k) {
    return gauss_kronrod<double, 61>::integrate(
        [&](double x) { return std::pow(x, k) * w(x); }, -1.0, 60.0, 15, 1e-14);
  };
  const double z = mom(0), m1 = mom(1) / z, m2 = mom(2) / z, m3 = mom(3) / z;
  return {m1, m2 - m1 * m1, m3 - 3 * m1 * m2 + 2 * m1 * m1 * m1, z};
}

}  // namespace

TEST_CASE("pool posterior matches the gaussian oracle") {
  auto pool = std::make_shared<SamplePool>(draw_pool(make_gaussian(2), 100000, 5));
  const PoolPosterior eng(pool);
  const TiltState s = eng.moments(1.0, vec({2.0, 0.0}));
  // Loose bands: 3 SE of a 1e5 self-normalized estimate is well under 0.02.
  CHECK(s.barycenter[0] == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::abs(s.barycenter[1]) < 0.02);
  CHECK(s.covariance(0, 0) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(std::abs(s.covariance(0, 1)) < 0.02);
  REQUIRE(s.ess);
  CHECK(*s.ess > 1000.0);
}

TEST_CASE("unit weights at t = 0 reproduce pool moments") {
  const SamplePool pool = draw_pool(make_product_exponential(2), 1000, 9);
  const TiltState s = posterior_moments(pool, 0.0, vec({0.0, 0.0}));
  double m0 = 0.0;
  for (std::size_t i = 0; i < pool.count; ++i) m0 += pool.point(i)[0];
  CHECK(s.barycenter[0] == doctest::Approx(m0 / 1000.0).epsilon(1e-12));
}

TEST_CASE("product posterior against quadrature oracle") {
  const ProductPosterior eng(make_product_exponential(1));
  const auto ref = tilted_exp_moments(0.5, 0.3);
  const TiltState s = eng.moments(0.5, vec({0.3}));
  CHECK(s.barycenter[0] == doctest::Approx(ref[0]).epsilon(1e-10));
  CHECK(s.covariance(0, 0) == doctest::Approx(ref[1]).epsilon(1e-10));
  const ThirdMomentTensor u = third_moment(eng, 0.5, vec({0.3}));
  CHECK(u.at(0, 0, 0) == doctest::Approx(ref[2]).epsilon(1e-9));
  // Exp(1) centred: third central moment 2.
  CHECK(third_moment(eng, 0.0, vec({0.0})).at(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("pool posterior within 3 SE of the quadrature oracle") {
  auto pool = std::make_shared<SamplePool>(draw_pool(make_product_exponential(1), 100000, 3));
  const auto ref = tilted_exp_moments(0.5, 0.3);
  const TiltState s = PoolPosterior(pool).moments(0.5, vec({0.3}));
  // Delta-method SE of the self-normalized mean: sd / sqrt(ESS).
  const double se = std::sqrt(ref[1] / *s.ess);
  CHECK(std::abs(s.barycenter[0] - ref[0]) < 3.0 * se);
}

TEST_CASE("third moments are symmetric and vanish for the gaussian") {
  const ProductPosterior eng(make_product_exponential(3));
  const ThirdMomentTensor u = third_moment(eng, 0.4, vec({0.2, -0.5, 0.9}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(u.at(i, j, k) == doctest::Approx(u.at(k, i, j)).epsilon(1e-8));
        CHECK(u.at(i, j, k) == doctest::Approx(u.at(j, k, i)).epsilon(1e-8));
      }
  const ProductPosterior g(make_gaussian(2));
  const ThirdMomentTensor z = third_moment(g, 1.0, vec({0.5, 1.0}));
  for (double e : z.entries) CHECK(std::abs(e) < 1e-12);
  CHECK_THROWS_AS(third_moment(ProductPosterior(make_gaussian(7)), 0.1, Eigen::VectorXd::Zero(7)),
                  LabError);
}

TEST_CASE("degenerate tilt raises") {
  auto pool = std::make_shared<SamplePool>(draw_pool(make_gaussian(2), 200, 1));
  const PoolPosterior eng(pool, 50.0);
  CHECK_THROWS_AS(eng.moments(50.0, vec({200.0, 0.0})), LabError);
}

TEST_CASE("paths are deterministic and start at the prior") {
  const MeasureModel m = make_product_exponential(2);
  const ProductPosterior eng(m);
  const std::vector<double> times{0.0, 0.1, 0.5};
  const auto a = drive_tilt_exact(m, eng, times, 17);
  const auto b = drive_tilt_exact(m, eng, times, 17);
  CHECK(a.states[2].theta == b.states[2].theta);
  CHECK(a.states[0].theta.norm() == 0.0);
  CHECK((a.states[0].covariance - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-10);
  for (std::size_t k = 0; k < times.size(); ++k) {
    double sum = 0.0;
    for (double l : a.eigenvalues[k]) {
      CHECK(l >= -1e-10);
      sum += l;
    }
    CHECK(sum == doctest::Approx(a.states[k].covariance.trace()).epsilon(1e-8));
    if (k > 0) CHECK(a.eigenvalues[k].back() <= 1.0 / times[k] + 1e-9);
  }
}

TEST_CASE("euler-maruyama argument checks and one step") {
  const MeasureModel m = make_gaussian(2);
  const ProductPosterior eng(m);
  CHECK_THROWS_AS(drive_sde(m, eng, 0.0, 1.0, 1), LabError);
  CHECK_THROWS_AS(drive_sde(m, eng, 0.5, 0.1, 1), LabError);
  EnsembleSpec spec;
  spec.driver = Driver::kEulerMaruyama;
  spec.dt = 1e-3;
  spec.t_end = 1e-3;
  spec.paths = 4000;
  const auto paths = simulate_ensemble(m, eng, spec);
  std::vector<double> x(paths.size());
  for (std::size_t p = 0; p < paths.size(); ++p) x[p] = paths[p].states.back().theta[0];
  const MeanSe ms = mean_se(x);
  CHECK(std::abs(ms.mean) < 4.0 * ms.se);
}

TEST_CASE("gaussian ensemble: oracle moments and martingale identities") {
  const MeasureModel m = make_gaussian(3);
  const ProductPosterior eng(m);
  EnsembleSpec spec;
  // Drift floor is sized for Simpson on a 0.05 grid.
  for (int k = 0; k <= 10; ++k) spec.times.push_back(0.05 * k);
  spec.paths = 2000;
  spec.options.third_moments = true;
  const auto paths = simulate_ensemble(m, eng, spec);
  const EnsembleStats st = ensemble_stats(paths);
  CHECK(st.per_time[0].a_norm_sq.mean < 1e-24);
  const TimeStats& last = st.per_time.back();
  CHECK(last.tr_A_sq.mean == doctest::Approx(3.0 / (1.5 * 1.5)).epsilon(1e-12));
  CHECK(std::abs(last.a_norm_sq.mean - 1.0) < 3.0 * last.a_norm_sq.se);
  const MartingaleReport mr = martingale_checks(paths);
  for (const auto& row : mr.conservation) {
    INFO(row.t, " ", row.lhs, " ", row.tolerance);
    CHECK(row.pass);
  }
  for (const auto& row : mr.drift) {
    INFO(row.t, " ", row.lhs, " ", row.rhs, " ", row.tolerance);
    CHECK(row.pass);
  }
  CHECK(mr.pass);
  for (const auto& row : mr.conservation) CHECK(row.lhs == doctest::Approx(3.0).epsilon(0.05));
  // f = identity: drift is -Tr A^2 with no third-moment term.
  const DriftReport dr = eigen_drift_check(paths, identity_function());
  CHECK(dr.pass);
  CHECK(eigen_drift({1.0, 1.0}, third_moment(ProductPosterior(make_gaussian(2)), 0.0,
                                             Eigen::VectorXd::Zero(2)),
                    identity_function()) == doctest::Approx(-2.0));
  for (double r : {0.1, 1.0, 3.0}) CHECK(moment_bound_check(paths, r).violations == 0);
  CHECK(lichnerowicz_cap_check(paths).violations == 0);
  for (const auto& row : opnorm_tail(paths)) CHECK(row.frequency == 0.0);
}

TEST_CASE("equal eigenvalues use the second-derivative limit") {
  ThirdMomentTensor u;
  u.n = 2;
  u.entries.assign(8, 0.3);
  const ScalarFunction sq{"sq", [](double x) { return x * x; },
                          [](double x) { return 2 * x; }, [](double) { return 2.0; }};
  const double at = eigen_drift({0.5, 0.5}, u, sq);
  const double near = eigen_drift({0.5, 0.5 + 1e-7}, u, sq);
  CHECK(std::isfinite(at));
  CHECK(at == doctest::Approx(near).epsilon(1e-5));
}

TEST_CASE("ks statistic") {
  std::vector<double> a, b;
  for (int i = 0; i < 1000; ++i) {
    a.push_back(i / 1000.0);
    b.push_back(i / 1000.0 + 0.5);
  }
  const KsResult same = ks_two_sample(a, a);
  CHECK(same.statistic == 0.0);
  CHECK(same.pass);
  const KsResult shifted = ks_two_sample(a, b);
  CHECK(shifted.statistic == doctest::Approx(0.5).epsilon(1e-3));
  CHECK_FALSE(shifted.pass);
}

TEST_CASE("empty ensemble") {
  CHECK_THROWS_AS(ensemble_stats({}), LabError);
}

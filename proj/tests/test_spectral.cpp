#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sllab/error.hpp"
#include "sllab/measures.hpp"
#include "sllab/rng.hpp"
#include "sllab/spectral.hpp"

using namespace sllab;

namespace {

const SpectralDecomposition& gaussian_dec() {
  static const SpectralDecomposition d = discretize_generator(gaussian_factor(), 4000, 60);
  return d;
}

const SpectralDecomposition& exponential_dec() {
  static const SpectralDecomposition d = discretize_generator(exponential_factor(), 4000, 60);
  return d;
}

// Discrete Dirichlet form and variance of a cell vector.
double dirichlet(const FluxGrid& g, const std::vector<double>& v) {
  double e = 0.0;
  for (std::size_t j = 0; j + 1 < v.size(); ++j) {
    e += g.conductance[j] * (v[j + 1] - v[j]) * (v[j + 1] - v[j]);
  }
  return e;
}

double variance(const FluxGrid& g, const std::vector<double>& v) {
  double m = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    m += g.weights[j] * v[j];
    m2 += g.weights[j] * v[j] * v[j];
  }
  return m2 - m * m;
}

}  // namespace

TEST_CASE("ornstein-uhlenbeck spectrum") {
  const auto& d = gaussian_dec();
  for (int k = 0; k <= 5; ++k) CHECK(d.eigenvalues[k] == doctest::Approx(k).epsilon(1e-3).scale(1.0));
  CHECK(std::abs(d.eigenvalues[0]) < 1e-8);
  const Eigen::VectorXd phi0 = d.eigenfunctions.col(0);
  CHECK(phi0.maxCoeff() - phi0.minCoeff() < 1e-8);
}

TEST_CASE("eigenfunctions are orthonormal in the weighted product") {
  const auto& d = gaussian_dec();
  const std::size_t n = d.grid.weights.size();
  for (int a = 0; a < 8; ++a) {
    for (int b = 0; b <= a; ++b) {
      std::vector<double> u(n), v(n);
      for (std::size_t j = 0; j < n; ++j) {
        u[j] = d.eigenfunctions(j, a);
        v[j] = d.eigenfunctions(j, b);
      }
      CHECK(inner(d, u, v) == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-8).scale(1.0));
    }
  }
}

TEST_CASE("Rayleigh quotients bound the gap from above") {
  for (const auto* d : {&gaussian_dec(), &exponential_dec()}) {
    const std::size_t n = d->grid.weights.size();
    std::vector<double> phi1(n);
    for (std::size_t j = 0; j < n; ++j) phi1[j] = d->eigenfunctions(j, 1);
    // The form reproduces lambda_1 on its own eigenvector.
    CHECK(dirichlet(d->grid, phi1) / variance(d->grid, phi1) ==
          doctest::Approx(d->lambda_1()).epsilon(1e-8));
    Philox rng(23);
    for (int rep = 0; rep < 50; ++rep) {
      const double a = rng.normal(), b = rng.normal(), c = rng.normal(), w = 0.5 + rng.uniform();
      std::vector<double> v(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double x = d->grid.centers[j];
        v[j] = a * x + b * x * x / (1 + x * x / 4) + c * std::sin(w * x);
      }
      CHECK(dirichlet(d->grid, v) / variance(d->grid, v) >= d->lambda_1() * (1 - 1e-10));
    }
  }
}

TEST_CASE("exponential gap") {
  CHECK(exponential_dec().lambda_1() == doctest::Approx(0.25).epsilon(1e-3 / 0.25));
}

TEST_CASE("spectral projections of x on the gaussian") {
  const auto& d = gaussian_dec();
  const std::size_t n = d.grid.weights.size();
  std::vector<double> x(n);
  for (std::size_t j = 0; j < n; ++j) x[j] = d.grid.centers[j];
  for (double v : project_below(d, x, 0.5)) CHECK(std::abs(v) < 1e-6);
  const auto p = project_below(d, x, 1.5);
  // The discrete first mode is x only up to discretization error; compare in L2(w).
  std::vector<double> diff(n);
  for (std::size_t j = 0; j < n; ++j) diff[j] = p[j] - x[j];
  CHECK(std::sqrt(inner(d, diff, diff)) < 1e-4);
  for (double v : project_below(d, x, -1.0)) CHECK(v == 0.0);
  CHECK_THROWS_AS(project_below(d, x, 0.5 * (d.eigenvalues.back() + d.gershgorin)), LabError);
}

TEST_CASE("profile is a distribution function") {
  const auto& d = exponential_dec();
  std::vector<double> l;
  for (int i = 0; i <= 60; ++i) l.push_back(std::pow(10.0, -3.0 + i / 10.0));
  const SpectralProfile p = profile(d, l);
  for (std::size_t i = 0; i < l.size(); ++i) {
    CHECK(p.F_values[i] >= 0.0);
    CHECK(p.F_values[i] <= 1.0 + 1e-12);
    if (i) CHECK(p.F_values[i] >= p.F_values[i - 1] - 1e-12);
  }
  // Past the last computed mode the profile is flagged rather than completed.
  CHECK_FALSE(p.resolved.back());
  CHECK(profile(d, {2.0 * d.gershgorin}).F_values[0] == 1.0);
  const auto q = profile(d, {0.5, 1.0, d.eigenvalues.back() * (1 + 1e-12)});
  CHECK(q.resolved[1]);
  CHECK(q.F_values[0] < q.F_values[1]);
  CHECK(q.F_values[1] < q.F_values[2]);
  CHECK(q.F_values[2] > 0.9);
}

TEST_CASE("thin shell numbers") {
  const auto g = thin_shell_bound_check(gaussian_dec());
  CHECK(g.sigma_sq == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(g.bound == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(g.pass);
  const auto e = thin_shell_bound_check(exponential_dec());
  CHECK(e.sigma_sq == doctest::Approx(8.0).epsilon(1e-9));
  CHECK(e.pass);
}

TEST_CASE("H^-1 inequality") {
  ProductTestFunction sq{1, {{1.0, {{0.0, 0.0, 1.0}}}}};
  const auto g = h_minus1_inequality_check(gaussian_dec(), sq);
  CHECK(g.lhs == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g.rhs == doctest::Approx(4.0).epsilon(1e-6));
  CHECK(g.pass);
  ProductTestFunction pair{2, {{1.0, {{-1.0, 0.0, 1.0}, {-1.0, 0.0, 1.0}}}}};
  CHECK(h_minus1_inequality_check(exponential_dec(), pair).pass);
  ProductTestFunction lin{1, {{1.0, {{0.0, 1.0}}}}};
  CHECK_THROWS_AS(h_minus1_inequality_check(gaussian_dec(), lin), LabError);
  ProductTestFunction big{4, {{1.0, {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}}}};
  CHECK_THROWS_AS(h_minus1_inequality_check(gaussian_dec(), big), LabError);
}

TEST_CASE("poincare, lichnerowicz and isoperimetry") {
  const auto g = poincare_and_isoperimetry(gaussian_dec(), 1.0);
  CHECK(g.C_p == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(g.psi == doctest::Approx(std::sqrt(std::numbers::pi / 2)).epsilon(1e-3));
  CHECK(std::abs(g.psi_threshold) < 1e-2);
  CHECK(g.buser_ledoux_pass);
  CHECK(g.lichnerowicz_pass);
  CHECK(g.spectral_variance_pass);
  CHECK_THROWS_AS(poincare_and_isoperimetry(gaussian_dec(), 1.1), LabError);
  const auto e = poincare_and_isoperimetry(exponential_dec());
  CHECK(e.C_p == doctest::Approx(4.0).epsilon(0.01));
  CHECK(e.buser_ledoux_pass);
  CHECK(std::isfinite(e.psi));
}

TEST_CASE("resolution guard") {
  CHECK_THROWS_AS(discretize_generator(gaussian_factor(), 400, 100), LabError);
}

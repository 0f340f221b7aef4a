#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sllab/measures.hpp"
#include "sllab/numerics.hpp"

namespace sllab {

struct Axis {
  double x0 = 0.0;
  double h = 1.0;
  std::size_t n = 0;
  double node(std::size_t i) const { return x0 + h * static_cast<double>(i); }
};

/// Rectangular grid with one or two axes; values are stored with the last
/// axis fastest.
struct Grid {
  std::vector<Axis> axes;
  std::size_t dim() const { return axes.size(); }
  std::size_t size() const;
  double cell() const;  // product of spacings
};

struct GridFunction {
  Grid grid;
  std::vector<double> values;
  std::vector<char> mask;  // nonzero where the value is valid; empty = all
};

/// A smooth test function with analytic first and second derivatives.
struct TestFunction {
  std::size_t dim = 1;
  std::string name;
  std::function<double(std::span<const double>)> value;
  std::function<void(std::span<const double>, std::span<double>)> gradient;
  // 1D only: second derivative, used by the Bochner checks.
  std::function<double(double)> d2;
};

// Polynomial sum c_k x^k times exp(-x^2 / (2 w^2)).
TestFunction poly_gaussian_bump(std::vector<double> coef, double width);
// Polynomial times the compact bump exp(1 - 1/(1 - (x/R)^2)) on |x| < R.
TestFunction poly_compact_bump(std::vector<double> coef, double radius);
TestFunction polynomial(std::vector<double> coef);
// u(x, y) = f(x) g(y) from two 1D test functions.
TestFunction tensor_product(const TestFunction& f, const TestFunction& g);

struct Resolution {
  std::size_t nodes = 2001;   // output grid nodes per axis
  int base_panels = 64;       // 16-point panels for the base quadrature
  std::size_t nodes_2d = 301;
  int base_panels_2d = 32;
};

struct SmoothedMeasure {
  MeasureModel base;
  double s = 0.0;
  Grid grid;
  std::vector<double> rho_s;      // normalized so the grid integral is 1
  std::vector<double> log_rho_s;
  std::vector<char> mask;         // rho_s above the 1e-300 floor
  double mass_defect = 0.0;       // |grid integral - 1| before normalizing
  // 1D base quadrature: nodes and probability weights of mu.
  std::vector<double> base_nodes;
  std::vector<double> base_weights;
};

SmoothedMeasure smooth(const MeasureModel& base, double s,
                       Resolution res = {});

// Base quadrature of a product factor (probability weights).
QuadRule base_quadrature(const Factor1D& factor, int panels);

GridFunction tabulate(const Grid& grid, const TestFunction& u);
GridFunction apply_P(const GridFunction& u, double s);
// Q_s u = P_s(u rho) / rho_s on the grid of `smoothed`.
GridFunction apply_Q(const TestFunction& u, const SmoothedMeasure& smoothed);
// Q_s u at a single point y (1D).
double apply_Q_at(const TestFunction& u, const SmoothedMeasure& smoothed,
                  double y);
// Exact derivative (Q_s u)'(y) = Cov(u(x), x | y) / s (1D).
double apply_Q_derivative_at(const TestFunction& u,
                             const SmoothedMeasure& smoothed, double y);

// Trapezoid integral of f against mu_s over unmasked nodes.
double integrate(const SmoothedMeasure& m, std::span<const double> f);

struct IdentityResult {
  std::string identity;
  std::string base;
  double s = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// <Q_s u, v>_{mu_s} against <u, P_s v>_mu (1D).
IdentityResult adjointness_check(const MeasureModel& base, const TestFunction& u,
                                 const TestFunction& v, double s,
                                 Resolution res = {}, double tol = 1e-6);

struct StReport {
  double max_pointwise_err = 0.0;
  std::size_t points = 0;
  IdentityResult pointwise;
  IdentityResult distributional;  // E|int u dp_t|^2 vs int |Q_s u|^2 dmu_s
  double mc_se = 0.0;
  bool pass = false;
};
StReport check_st_correspondence(const MeasureModel& base,
                                 const TestFunction& u, double t,
                                 std::size_t paths = 10000,
                                 std::uint64_t seed = 1, Resolution res = {});

IdentityResult variance_identity_check(const MeasureModel& base, double s,
                                       Resolution res = {});

struct HessianWindowReport {
  double s = 0.0;
  double min_hessian = 0.0;  // smallest eigenvalue found over interior nodes
  double max_hessian = 0.0;
  double worst_lower_slack = 0.0;  // min over nodes of H + 1/s + err
  double worst_upper_slack = 0.0;  // min over nodes of err - H
  std::size_t nodes_checked = 0;
  bool window_pass = false;
  // Fisher-information check for smooth positive bases; empty otherwise.
  std::vector<double> theta_values;  // int d^2 phi along unit directions
  bool theta_applicable = false;
  bool theta_pass = true;
  bool pass = false;
};
HessianWindowReport hessian_window_check(const MeasureModel& base, double s,
                                         Resolution res = {},
                                         double slack = 1e-6);

IdentityResult gradient_contraction_check(const MeasureModel& base,
                                          const TestFunction& u, double s,
                                          Resolution res = {},
                                          double slack = 1e-8);

struct BochnerReport {
  IdentityResult bochner;      // int (L_s u)^2 = int |D^2u|^2 - <D^2 log rho_s Du, Du>
  IdentityResult gamma2;       // recursion vs closed form, integrated
  IdentityResult dissipation0; // d/ds int (Q_s u)^2 = -int |D Q_s u|^2
  IdentityResult dissipation1; // d/ds int |D Q_s u|^2 = -int Gamma_2(Q_s u)
  // Discrepancies at the base and the halved spacing.
  std::array<double, 4> coarse_err{};
  std::array<double, 4> fine_err{};
  std::array<double, 4> refinement{};  // coarse/fine ratios
  bool pass = false;
};
BochnerReport bochner_gamma2_check(const SmoothedMeasure& smoothed,
                                   const TestFunction& u,
                                   double rel_tol = 1e-3,
                                   double floor = 1e-10);

/// 2D density e^{-phi} restricted to a box, for the marginal-convexity check.
struct Density2D {
  std::string name;
  std::function<double(double, double)> log_density;
  std::array<double, 4> box{-8.0, 8.0, -8.0, 8.0};  // xlo, xhi, ylo, yhi
};

struct ProjectionReport {
  double t = 0.0;
  double min_input_curvature = 0.0;   // min eigenvalue of D^2 phi on the grid
  double min_marginal_curvature = 0.0;  // min of (-log m)'' + FD error estimate
  std::size_t nodes_checked = 0;
  bool pass = false;
};
// Marginal along the unit vector `direction`. With `certify_input`, a grid
// check that D^2 phi >= 2t runs first and violations raise an error.
ProjectionReport projection_ulc_check(const Density2D& density, double t,
                                      std::array<double, 2> direction = {1.0, 0.0},
                                      bool certify_input = true,
                                      double slack = 1e-6);

// Deterministic family of densities e^{-phi} with D^2 phi >= 2t: quadratic
// forms with smallest eigenvalue at least 2t plus convex log-cosh and quartic
// terms.
std::vector<Density2D> ulc_test_family(std::size_t count, double t,
                                       std::uint64_t seed);

}  // namespace sllab

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sllab/measures.hpp"

namespace sllab {

/// Unnormalized log-density on a compact interval.
struct Density1D {
  std::string name;
  std::function<double(double)> log_density;
  double lo = 0.0;
  double hi = 0.0;
  // log of the full-line normalizer when known; used for the truncation defect.
  std::optional<double> log_normalizer;
};

Density1D density_from_factor(const Factor1D& factor);

/// Cell-centred finite-volume form of L u = rho^{-1} (rho u')'. Cell masses
/// and face conductances are normalized so the masses sum to one.
struct FluxGrid {
  double lo = 0.0;
  double h = 0.0;
  std::vector<double> centers;
  std::vector<double> weights;      // w_j, sums to 1
  std::vector<double> conductance;  // kappa_{j+1/2} = rho(face)/h, size N-1
  std::vector<double> log_rho;      // at centres, unnormalized
};
FluxGrid make_flux_grid(const Density1D& density, std::size_t cells);

// ||v||^2_{H^-1} = sum_k <v, phi_k>^2 / lambda_k over the whole discrete
// spectrum, computed from face fluxes. v is per cell and mean-zero under w.
double h_minus1_norm_sq(const FluxGrid& grid, std::span<const double> v);

struct SpectralDecomposition {
  Density1D density;
  FluxGrid grid;
  std::vector<double> eigenvalues;  // ascending, size K+1
  Eigen::MatrixXd eigenfunctions;   // cells x (K+1), w-orthonormal columns
  std::size_t K = 0;
  double gershgorin = 0.0;          // upper bound on the whole spectrum
  double mass_defect = 0.0;         // mass outside [lo, hi]
  double min_curvature = 0.0;       // min second difference of -log rho
  double lambda_1() const { return eigenvalues.at(1); }
};

SpectralDecomposition discretize_generator(const Density1D& density,
                                           std::size_t cells, std::size_t K);
SpectralDecomposition discretize_generator(const Factor1D& factor,
                                           std::size_t cells, std::size_t K);

// <u, v> in the weighted inner product.
double inner(const SpectralDecomposition& dec, std::span<const double> u,
             std::span<const double> v);

// Sum over 0 < lambda_k < lambda of <u, phi_k> phi_k.
std::vector<double> project_below(const SpectralDecomposition& dec,
                                  std::span<const double> u, double lambda);

struct SpectralProfile {
  std::vector<double> lambdas;
  std::vector<double> F_values;
  std::vector<char> resolved;  // false where lambda lies beyond the computed modes
  double variance = 0.0;       // discrete Var(x) used to normalize F
  double overlay_c = 0.0;      // smallest c with F <= c lambda |log lambda| on (0, 1)
};
SpectralProfile profile(const SpectralDecomposition& dec,
                        const std::vector<double>& lambdas);

struct ThinShellReport {
  double sigma_sq = 0.0;       // Var(x^2) per coordinate
  double bound = 0.0;          // 4 int_{lambda_1}^inf lambda^-2 F dlambda
  double bound_coarse = 0.0;   // flux value before extrapolation
  double resolved_bound = 0.0; // contribution of the computed modes only
  bool pass = false;
};
ThinShellReport thin_shell_bound_check(const SpectralDecomposition& dec,
                                       double slack = 1e-6);

/// u = sum_t coef_t prod_i p_{t,i}(x_i) with polynomial factors.
struct ProductTerm {
  double coef = 1.0;
  std::vector<std::vector<double>> polys;  // one coefficient list per coordinate
};
struct ProductTestFunction {
  std::size_t dim = 1;
  std::vector<ProductTerm> terms;
};

struct HMinus1Report {
  double lhs = 0.0;           // Var(u)
  // sum_i ||d_i u||^2_{H^-1}: whole spectrum in 1D, computed modes otherwise
  double rhs = 0.0;
  double truncated_mass = 0.0;  // L2 mass of d_i u outside the computed modes
  bool pass = false;
};
HMinus1Report h_minus1_inequality_check(const SpectralDecomposition& dec,
                                        const ProductTestFunction& u,
                                        double slack = 1e-6);

struct PoincareReport {
  double lambda_mu = 0.0;
  double C_p = 0.0;
  double psi = 0.0;
  double psi_threshold = 0.0;  // face where the half-line scan peaks
  double variance = 0.0;
  double kappa = 0.0;          // curvature used for the two curvature bounds
  bool curvature_applicable = false;
  bool buser_ledoux_pass = false;
  bool lichnerowicz_pass = false;
  bool spectral_variance_pass = false;
  double lichnerowicz_slack = 0.0;  // 1/kappa - C_p
  double spectral_variance_slack = 0.0;
};
// kappa: lower bound on (-log rho)''; when given it is certified against the
// grid, otherwise the grid minimum is used.
PoincareReport poincare_and_isoperimetry(const SpectralDecomposition& dec,
                                         std::optional<double> kappa = {},
                                         double rel_tol = 1e-4);

}  // namespace sllab

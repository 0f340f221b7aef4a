#include "sllab/spectral.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sllab/error.hpp"
#include "sllab/numerics.hpp"

namespace sllab {

namespace {

double poly_eval(const std::vector<double>& c, double x, int deriv) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > static_cast<std::size_t>(deriv);) {
    double coef = c[k];
    for (int d = 0; d < deriv; ++d) coef *= static_cast<double>(k - d);
    acc = acc * x + coef;
  }
  return acc;
}

struct Moments {
  double mean = 0.0, m2 = 0.0, m4 = 0.0;
};

// Gauss-Legendre rule with probability weights for the truncated density.
QuadRule density_rule(const Density1D& d) {
  QuadRule q = gauss_legendre(d.lo, d.hi, 256);
  std::vector<double> logw(q.nodes.size());
  for (std::size_t k = 0; k < q.nodes.size(); ++k) {
    logw[k] = std::log(q.weights[k]) + d.log_density(q.nodes[k]);
  }
  const double lz = log_sum_exp(logw);
  for (std::size_t k = 0; k < q.nodes.size(); ++k) q.weights[k] = std::exp(logw[k] - lz);
  return q;
}

Moments quadrature_moments(const Density1D& d) {
  const QuadRule q = density_rule(d);
  Moments m;
  for (std::size_t k = 0; k < q.nodes.size(); ++k) {
    const double w = q.weights[k];
    const double x = q.nodes[k];
    m.mean += w * x;
    m.m2 += w * x * x;
    m.m4 += w * x * x * x * x;
  }
  return m;
}

double weighted_mean(const std::vector<double>& w, std::span<const double> v) {
  CompensatedSum s;
  for (std::size_t j = 0; j < w.size(); ++j) s.add(w[j] * v[j]);
  return s.value();
}

}  // namespace

Density1D density_from_factor(const Factor1D& factor) {
  Density1D d;
  d.name = factor.name;
  d.log_density = factor.log_density;
  d.lo = factor.spectral_lo;
  d.hi = factor.spectral_hi;
  d.log_normalizer = factor.log_normalizer;
  return d;
}

FluxGrid make_flux_grid(const Density1D& density, std::size_t cells) {
  if (cells < 8) {
    throw LabError(ErrorKind::kResolution, "need at least 8 cells");
  }
  if (!(density.hi > density.lo)) {
    throw LabError(ErrorKind::kInvalidDimension, "empty density interval");
  }
  FluxGrid g;
  g.lo = density.lo;
  g.h = (density.hi - density.lo) / static_cast<double>(cells);
  g.centers.resize(cells);
  g.log_rho.resize(cells);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cells; ++j) {
    g.centers[j] = g.lo + g.h * (static_cast<double>(j) + 0.5);
    g.log_rho[j] = density.log_density(g.centers[j]);
    if (!std::isfinite(g.log_rho[j])) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     density.name + ": density must be positive on the grid");
    }
    mx = std::max(mx, g.log_rho[j]);
  }
  CompensatedSum z;
  g.weights.resize(cells);
  for (std::size_t j = 0; j < cells; ++j) {
    g.weights[j] = std::exp(g.log_rho[j] - mx);
    z.add(g.weights[j]);
  }
  const double total = z.value();
  for (double& w : g.weights) w /= total;
  g.conductance.resize(cells - 1);
  for (std::size_t j = 0; j + 1 < cells; ++j) {
    const double face = g.lo + g.h * static_cast<double>(j + 1);
    // rho(face) h / (h^2 total), with the mass normalization above.
    g.conductance[j] =
        std::exp(density.log_density(face) - mx) / (total * g.h * g.h);
  }
  return g;
}

double h_minus1_norm_sq(const FluxGrid& grid, std::span<const double> v) {
  const std::size_t n = grid.weights.size();
  if (v.size() != n) {
    throw LabError(ErrorKind::kInvalidDimension, "cell function size mismatch");
  }
  const double mean = weighted_mean(grid.weights, v);
  // Flux through face j is the mass of w (v - mean) on either side; take the
  // side with less probability mass so tail fluxes keep relative accuracy.
  std::vector<double> left(n), right(n), cdf(n);
  CompensatedSum l, c;
  for (std::size_t j = 0; j < n; ++j) {
    l.add(grid.weights[j] * (v[j] - mean));
    c.add(grid.weights[j]);
    left[j] = l.value();
    cdf[j] = c.value();
  }
  CompensatedSum r;
  for (std::size_t j = n; j-- > 0;) {
    right[j] = r.value();  // sum over i > j
    r.add(grid.weights[j] * (v[j] - mean));
  }
  CompensatedSum acc;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double g = cdf[j] <= 0.5 ? left[j] : -right[j];
    acc.add(g * g / grid.conductance[j]);
  }
  return acc.value();
}

SpectralDecomposition discretize_generator(const Density1D& density,
                                           std::size_t cells, std::size_t K) {
  if (4 * K >= cells) {
    throw LabError(ErrorKind::kResolution,
                   "K must be below a quarter of the cell count",
                   static_cast<double>(K));
  }
  if (K < 1) {
    throw LabError(ErrorKind::kResolution, "need at least one nonzero mode");
  }
  SpectralDecomposition dec;
  dec.density = density;
  dec.grid = make_flux_grid(density, cells);
  dec.K = K;
  const FluxGrid& g = dec.grid;
  const std::size_t n = cells;

  // Symmetric form S = W^{-1/2} (graph Laplacian) W^{-1/2}.
  std::vector<double> d(n, 0.0), e(n, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double k = g.conductance[j];
    d[j] += k / g.weights[j];
    d[j + 1] += k / g.weights[j + 1];
    e[j] = -k / std::sqrt(g.weights[j] * g.weights[j + 1]);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double off = (j > 0 ? std::abs(e[j - 1]) : 0.0) + std::abs(e[j]);
    dec.gershgorin = std::max(dec.gershgorin, d[j] + off);
  }

  std::vector<double> w(n), z(n * (K + 1));
  std::vector<lapack_int> support(2 * (K + 1));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dstevr(
      LAPACK_COL_MAJOR, 'V', 'I', static_cast<lapack_int>(n), d.data(), e.data(),
      0.0, 0.0, 1, static_cast<lapack_int>(K + 1), 0.0, &found, w.data(),
      z.data(), static_cast<lapack_int>(n), support.data());
  if (info != 0 || found != static_cast<lapack_int>(K + 1)) {
    throw LabError(ErrorKind::kResolution,
                   "tridiagonal eigensolver failed (info " +
                       std::to_string(info) + ")");
  }
  dec.eigenvalues.assign(w.begin(), w.begin() + static_cast<long>(K + 1));
  dec.eigenfunctions.resize(n, K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    double peak = 0.0;
    for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, std::abs(z[k * n + j]));
    double sign = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(z[k * n + j]) > 1e-12 * peak) {
        sign = z[k * n + j] > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      dec.eigenfunctions(j, k) = sign * z[k * n + j] / std::sqrt(g.weights[j]);
    }
  }

  if (density.log_normalizer) {
    const QuadRule q = gauss_legendre(density.lo, density.hi, 256);
    std::vector<double> terms(q.nodes.size());
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      terms[k] = std::log(q.weights[k]) + density.log_density(q.nodes[k]);
    }
    dec.mass_defect =
        std::abs(1.0 - std::exp(log_sum_exp(terms) - *density.log_normalizer));
  }
  dec.min_curvature = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double c =
        -(g.log_rho[j + 1] - 2.0 * g.log_rho[j] + g.log_rho[j - 1]) / (g.h * g.h);
    dec.min_curvature = std::min(dec.min_curvature, c);
  }
  return dec;
}

SpectralDecomposition discretize_generator(const Factor1D& factor,
                                           std::size_t cells, std::size_t K) {
  return discretize_generator(density_from_factor(factor), cells, K);
}

double inner(const SpectralDecomposition& dec, std::span<const double> u,
             std::span<const double> v) {
  const auto& w = dec.grid.weights;
  if (u.size() != w.size() || v.size() != w.size()) {
    throw LabError(ErrorKind::kInvalidDimension, "cell function size mismatch");
  }
  CompensatedSum s;
  for (std::size_t j = 0; j < w.size(); ++j) s.add(w[j] * u[j] * v[j]);
  return s.value();
}

std::vector<double> project_below(const SpectralDecomposition& dec,
                                  std::span<const double> u, double lambda) {
  const std::size_t n = dec.grid.weights.size();
  std::vector<double> out(n, 0.0);
  if (lambda <= 0.0) return out;
  if (lambda > dec.eigenvalues.back() && lambda <= dec.gershgorin) {
    throw LabError(ErrorKind::kResolution,
                   "projection level lies beyond the computed modes", lambda);
  }
  for (std::size_t k = 1; k <= dec.K && dec.eigenvalues[k] < lambda; ++k) {
    const double* col = dec.eigenfunctions.col(k).data();
    const double c = inner(dec, u, {col, n});
    for (std::size_t j = 0; j < n; ++j) out[j] += c * col[j];
  }
  if (lambda > dec.gershgorin) {
    // Everything except the constant mode.
    const double mean = weighted_mean(dec.grid.weights, u);
    for (std::size_t j = 0; j < n; ++j) out[j] = u[j] - mean;
  }
  return out;
}

SpectralProfile profile(const SpectralDecomposition& dec,
                        const std::vector<double>& lambdas) {
  const std::size_t n = dec.grid.weights.size();
  const std::vector<double>& x = dec.grid.centers;
  const double mean = weighted_mean(dec.grid.weights, x);
  std::vector<double> xc(n);
  for (std::size_t j = 0; j < n; ++j) xc[j] = x[j] - mean;
  SpectralProfile p;
  p.lambdas = lambdas;
  p.variance = inner(dec, xc, xc);
  std::vector<double> coef(dec.K + 1, 0.0);
  for (std::size_t k = 1; k <= dec.K; ++k) {
    const double c = inner(dec, xc, {dec.eigenfunctions.col(k).data(), n});
    coef[k] = c * c / p.variance;
  }
  for (double lam : lambdas) {
    double f = 0.0;
    bool resolved = true;
    if (lam > dec.gershgorin) {
      f = 1.0;
    } else {
      for (std::size_t k = 1; k <= dec.K && dec.eigenvalues[k] < lam; ++k) {
        f += coef[k];
      }
      resolved = lam <= dec.eigenvalues.back();
    }
    p.F_values.push_back(std::min(f, 1.0));
    p.resolved.push_back(resolved ? 1 : 0);
    if (lam > 0.0 && lam < 1.0 && resolved) {
      p.overlay_c = std::max(p.overlay_c, f / (lam * std::abs(std::log(lam))));
    }
  }
  return p;
}

ThinShellReport thin_shell_bound_check(const SpectralDecomposition& dec,
                                       double slack) {
  ThinShellReport rep;
  const Moments m = quadrature_moments(dec.density);
  rep.sigma_sq = m.m4 - m.m2 * m.m2;

  // The flux form gives the whole-spectrum sum; two cell counts and a
  // Richardson step remove the O(h^2) midpoint error.
  const std::size_t cells =
      std::max<std::size_t>(16 * dec.grid.weights.size(), 65536);
  auto flux_bound = [&](std::size_t c) {
    const FluxGrid g = make_flux_grid(dec.density, c);
    return 4.0 * h_minus1_norm_sq(g, g.centers);
  };
  const double coarse = flux_bound(cells);
  const double fine = flux_bound(2 * cells);
  rep.bound_coarse = coarse;
  rep.bound = (4.0 * fine - coarse) / 3.0;

  const std::size_t n = dec.grid.weights.size();
  const double mean = weighted_mean(dec.grid.weights, dec.grid.centers);
  std::vector<double> xc(n);
  for (std::size_t j = 0; j < n; ++j) xc[j] = dec.grid.centers[j] - mean;
  for (std::size_t k = 1; k <= dec.K; ++k) {
    const double c = inner(dec, xc, {dec.eigenfunctions.col(k).data(), n});
    rep.resolved_bound += 4.0 * c * c / dec.eigenvalues[k];
  }
  rep.pass = rep.sigma_sq <= rep.bound + slack;
  return rep;
}

HMinus1Report h_minus1_inequality_check(const SpectralDecomposition& dec,
                                        const ProductTestFunction& u,
                                        double slack) {
  const std::size_t dim = u.dim;
  if (dim == 0) {
    throw LabError(ErrorKind::kInvalidDimension, "dimension must be positive");
  }
  if (dim > 3) {
    throw LabError(ErrorKind::kDimensionTooLarge,
                   "spectral product sums support dim <= 3",
                   static_cast<double>(dim));
  }
  for (const ProductTerm& t : u.terms) {
    if (t.polys.size() != dim) {
      throw LabError(ErrorKind::kInvalidDimension,
                     "each term needs one polynomial per coordinate");
    }
  }
  const std::size_t n = dec.grid.weights.size();
  const std::size_t modes = dec.K + 1;
  const std::size_t nt = u.terms.size();

  // Per term and coordinate: values, derivative values, and their spectral
  // coefficients.
  struct Factor {
    std::vector<double> val, der;
    Eigen::VectorXd cval, cder;
  };
  std::vector<std::vector<Factor>> fac(nt, std::vector<Factor>(dim));
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      Factor& f = fac[t][i];
      f.val.resize(n);
      f.der.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        f.val[j] = poly_eval(u.terms[t].polys[i], dec.grid.centers[j], 0);
        f.der[j] = poly_eval(u.terms[t].polys[i], dec.grid.centers[j], 1);
      }
      f.cval.resize(modes);
      f.cder.resize(modes);
      for (std::size_t k = 0; k < modes; ++k) {
        std::span<const double> phi{dec.eigenfunctions.col(k).data(), n};
        f.cval[k] = inner(dec, f.val, phi);
        f.cder[k] = inner(dec, f.der, phi);
      }
    }
  }

  // Exact means for the hypothesis: E d_i u from quadrature of each factor.
  const QuadRule rule = density_rule(dec.density);
  auto expect = [&](const std::vector<double>& poly, int deriv) {
    double acc = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      acc += rule.weights[k] * poly_eval(poly, rule.nodes[k], deriv);
    }
    return acc;
  };
  for (std::size_t i = 0; i < dim; ++i) {
    double mean = 0.0, scale = 0.0;
    for (const ProductTerm& t : u.terms) {
      double p = t.coef;
      for (std::size_t j = 0; j < dim; ++j) p *= expect(t.polys[j], j == i ? 1 : 0);
      mean += p;
      scale += std::abs(p);
    }
    if (std::abs(mean) > 1e-8 * std::max(1.0, scale)) {
      throw LabError(ErrorKind::kHypothesisViolation,
                     "mean of partial derivative " + std::to_string(i) +
                         " is nonzero",
                     mean);
    }
  }

  HMinus1Report rep;
  if (dim == 1) {
    // Whole spectrum through face fluxes, extrapolated in the cell count;
    // Var(u) by quadrature. Equality cases stay resolvable this way.
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      double v = 0.0;
      for (const ProductTerm& t : u.terms) {
        v += t.coef * poly_eval(t.polys[0], rule.nodes[k], 0);
      }
      m1 += rule.weights[k] * v;
      m2 += rule.weights[k] * v * v;
    }
    rep.lhs = m2 - m1 * m1;
    auto flux = [&](std::size_t c) {
      const FluxGrid fg = make_flux_grid(dec.density, c);
      std::vector<double> du(c, 0.0);
      for (std::size_t j = 0; j < c; ++j) {
        for (const ProductTerm& t : u.terms) {
          du[j] += t.coef * poly_eval(t.polys[0], fg.centers[j], 1);
        }
      }
      return h_minus1_norm_sq(fg, du);
    };
    const std::size_t cells = std::max<std::size_t>(16 * n, 65536);
    const double coarse = flux(cells);
    rep.rhs = (4.0 * flux(2 * cells) - coarse) / 3.0;
    rep.pass = rep.lhs <= rep.rhs + slack;
    return rep;
  }
  // Var(u) from factorized inner products.
  double second = 0.0, first = 0.0;
  for (std::size_t a = 0; a < nt; ++a) {
    double pm = u.terms[a].coef;
    for (std::size_t i = 0; i < dim; ++i) pm *= fac[a][i].cval[0];
    first += pm;
    for (std::size_t b = 0; b < nt; ++b) {
      double p = u.terms[a].coef * u.terms[b].coef;
      for (std::size_t i = 0; i < dim; ++i) p *= inner(dec, fac[a][i].val, fac[b][i].val);
      second += p;
    }
  }
  rep.lhs = second - first * first;

  std::size_t total = 1;
  for (std::size_t i = 0; i < dim; ++i) total *= modes;
  for (std::size_t i = 0; i < dim; ++i) {
    // ||d_i u||^2 in L2 for the truncation diagnostic.
    double l2 = 0.0;
    for (std::size_t a = 0; a < nt; ++a) {
      for (std::size_t b = 0; b < nt; ++b) {
        double p = u.terms[a].coef * u.terms[b].coef;
        for (std::size_t j = 0; j < dim; ++j) {
          p *= j == i ? inner(dec, fac[a][j].der, fac[b][j].der)
                      : inner(dec, fac[a][j].val, fac[b][j].val);
        }
        l2 += p;
      }
    }
    double captured = 0.0, sum = 0.0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t idx[3] = {0, 0, 0};
      std::size_t rem = flat;
      double lam = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        idx[j] = rem % modes;
        rem /= modes;
        lam += dec.eigenvalues[idx[j]];
      }
      double c = 0.0;
      for (std::size_t a = 0; a < nt; ++a) {
        double p = u.terms[a].coef;
        for (std::size_t j = 0; j < dim; ++j) {
          p *= j == i ? fac[a][j].cder[idx[j]] : fac[a][j].cval[idx[j]];
        }
        c += p;
      }
      captured += c * c;
      // The constant mode carries the O(h^2) grid mean; it has no H^-1 part.
      if (flat != 0) sum += c * c / lam;
    }
    rep.rhs += sum;
    rep.truncated_mass += std::max(0.0, l2 - captured);
  }
  rep.pass = rep.lhs <= rep.rhs + slack;
  return rep;
}

PoincareReport poincare_and_isoperimetry(const SpectralDecomposition& dec,
                                         std::optional<double> kappa,
                                         double rel_tol) {
  PoincareReport rep;
  rep.lambda_mu = dec.lambda_1();
  rep.C_p = 1.0 / rep.lambda_mu;
  const FluxGrid& g = dec.grid;
  const std::size_t n = g.weights.size();

  // Half-line scan over faces. Density at a face in the normalization of w;
  // both tails are summed from their own end to keep relative accuracy.
  std::vector<double> tail(n, 0.0);
  CompensatedSum right;
  for (std::size_t j = n; j-- > 1;) {
    right.add(g.weights[j]);
    tail[j - 1] = right.value();
  }
  CompensatedSum left;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    left.add(g.weights[j]);
    const double rho_face = g.conductance[j] * g.h;
    const double v = std::min(left.value(), tail[j]) / rho_face;
    if (v > rep.psi) {
      rep.psi = v;
      rep.psi_threshold = g.lo + g.h * static_cast<double>(j + 1);
    }
  }
  rep.buser_ledoux_pass = rep.psi * rep.psi <= 9.0 * rep.C_p * (1.0 + rel_tol);

  const double mean = weighted_mean(g.weights, g.centers);
  for (std::size_t j = 0; j < n; ++j) {
    rep.variance += g.weights[j] * (g.centers[j] - mean) * (g.centers[j] - mean);
  }
  if (kappa) {
    // Second differences of -log rho lose ~1e-9 to rounding at fine grids.
    if (*kappa > dec.min_curvature + 1e-6 * std::max(1.0, *kappa)) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     dec.density.name + ": curvature " + format_double(*kappa) +
                         " not certified on the grid (min " +
                         format_double(dec.min_curvature) + ")",
                     dec.min_curvature);
    }
    rep.kappa = *kappa;
  } else {
    rep.kappa = dec.min_curvature;
  }
  rep.curvature_applicable = rep.kappa > 1e-12;
  if (rep.curvature_applicable) {
    const double lic = 1.0 / rep.kappa;
    const double kla = std::sqrt(rep.variance / rep.kappa);
    rep.lichnerowicz_slack = lic - rep.C_p;
    rep.spectral_variance_slack = kla - rep.C_p;
    rep.lichnerowicz_pass = rep.C_p <= lic * (1.0 + rel_tol);
    rep.spectral_variance_pass = rep.C_p <= kla * (1.0 + rel_tol);
  } else {
    // Both bounds are vacuous without positive curvature.
    rep.lichnerowicz_pass = true;
    rep.spectral_variance_pass = true;
  }
  return rep;
}

}  // namespace sllab

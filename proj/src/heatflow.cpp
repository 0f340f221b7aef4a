#include "sllab/heatflow.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sllab/error.hpp"
#include "sllab/rng.hpp"
#include "sllab/tilted.hpp"

namespace sllab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)

const Factor1D& require_factor(const MeasureModel& base, std::size_t max_dim) {
  if (base.dim == 0) {
    throw LabError(ErrorKind::kInvalidDimension, "dimension must be positive");
  }
  if (base.dim > max_dim) {
    throw LabError(ErrorKind::kGridBackendUnsupported,
                   "grid backend supports dim <= " + std::to_string(max_dim) +
                       ", got " + std::to_string(base.dim));
  }
  if (!base.factor) {
    throw LabError(ErrorKind::kGridBackendUnsupported,
                   "grid backend needs a product base with a 1D factor");
  }
  return *base.factor;
}

void require_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw LabError(ErrorKind::kInvalidScale, "smoothing scale must be positive",
                   s);
  }
}

double poly_eval(const std::vector<double>& c, double x, int deriv) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > static_cast<std::size_t>(deriv);) {
    double coef = c[k];
    for (int d = 0; d < deriv; ++d) coef *= static_cast<double>(k - d);
    acc = acc * x + coef;
  }
  return acc;
}

// 1D test function from value, first and second derivative.
TestFunction make_1d(std::string name, std::function<double(double)> f,
                     std::function<double(double)> f1,
                     std::function<double(double)> f2) {
  TestFunction u;
  u.dim = 1;
  u.name = std::move(name);
  u.value = [f](std::span<const double> x) { return f(x[0]); };
  u.gradient = [f1](std::span<const double> x, std::span<double> g) {
    g[0] = f1(x[0]);
  };
  u.d2 = std::move(f2);
  return u;
}

// Row-normalized posterior weights A(j, q) proportional to
// w_q exp(-(y_j - x_q)^2 / 2s).
Eigen::MatrixXd posterior_weights(const QuadRule& base, double s,
                                  const std::vector<double>& ys) {
  const std::size_t nq = base.nodes.size();
  Eigen::MatrixXd a(ys.size(), nq);
  std::vector<double> logw(nq);
  for (std::size_t q = 0; q < nq; ++q) logw[q] = std::log(base.weights[q]);
  parallel_for(ys.size(), [&](std::size_t j) {
    std::vector<double> row(nq);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < nq; ++q) {
      const double d = ys[j] - base.nodes[q];
      row[q] = logw[q] - d * d / (2.0 * s);
      mx = std::max(mx, row[q]);
    }
    double total = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      row[q] = std::exp(row[q] - mx);
      total += row[q];
    }
    for (std::size_t q = 0; q < nq; ++q) a(j, q) = row[q] / total;
  });
  return a;
}

struct Profile1D {
  Axis axis;
  std::vector<double> log_rho;
  QuadRule base;
  double mass = 1.0;
};

Profile1D profile_1d(const Factor1D& factor, double s, std::size_t nodes,
                     int panels) {
  if (nodes < 5) {
    throw LabError(ErrorKind::kResolution, "grid needs at least 5 nodes");
  }
  Profile1D p;
  p.base = base_quadrature(factor, panels);
  const double pad = 8.0 * std::sqrt(s);
  const double lo = factor.window_lo - pad;
  const double hi = factor.window_hi + pad;
  p.axis = {lo, (hi - lo) / static_cast<double>(nodes - 1), nodes};
  p.log_rho.resize(nodes);
  const std::size_t nq = p.base.nodes.size();
  std::vector<double> logw(nq);
  for (std::size_t q = 0; q < nq; ++q) logw[q] = std::log(p.base.weights[q]);
  const double log_gauss = -0.5 * std::log(2.0 * std::numbers::pi * s);
  parallel_for(nodes, [&](std::size_t j) {
    std::vector<double> terms(nq);
    const double y = p.axis.node(j);
    for (std::size_t q = 0; q < nq; ++q) {
      const double d = y - p.base.nodes[q];
      terms[q] = logw[q] - d * d / (2.0 * s);
    }
    p.log_rho[j] = log_sum_exp(terms) + log_gauss;
  });
  CompensatedSum mass;
  for (std::size_t j = 0; j < nodes; ++j) {
    const double w = (j == 0 || j + 1 == nodes) ? 0.5 : 1.0;
    mass.add(w * std::exp(p.log_rho[j]));
  }
  p.mass = mass.value() * p.axis.h;
  return p;
}

// Trapezoid weight of node index i on an axis of n nodes.
double trap(std::size_t i, std::size_t n) {
  return (i == 0 || i + 1 == n) ? 0.5 : 1.0;
}

std::vector<double> grid_nodes(const Axis& a) {
  std::vector<double> v(a.n);
  for (std::size_t i = 0; i < a.n; ++i) v[i] = a.node(i);
  return v;
}

// Centered first and second differences along a 1D array; NaN where the
// stencil leaves the array or hits a masked node.
void differences(const std::vector<double>& f, const std::vector<char>& mask,
                 double h, std::size_t stride, std::vector<double>& d1,
                 std::vector<double>& d2) {
  const std::size_t n = f.size();
  d1.assign(n, kNaN);
  d2.assign(n, kNaN);
  for (std::size_t i = stride; i + stride < n; ++i) {
    if (!mask.empty() && (!mask[i - stride] || !mask[i] || !mask[i + stride])) {
      continue;
    }
    const double hh = h * static_cast<double>(stride);
    d1[i] = (f[i + stride] - f[i - stride]) / (2.0 * hh);
    d2[i] = (f[i + stride] - 2.0 * f[i] + f[i - stride]) / (hh * hh);
  }
}

IdentityResult make_result(std::string identity, const MeasureModel& base,
                           double s, double lhs, double rhs, double tol) {
  IdentityResult r;
  r.identity = std::move(identity);
  r.base = base.key;
  r.s = s;
  r.lhs = lhs;
  r.rhs = rhs;
  r.abs_err = std::abs(lhs - rhs);
  const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
  r.rel_err = r.abs_err / scale;
  r.tolerance = tol;
  r.pass = r.rel_err <= tol;
  return r;
}

}  // namespace

std::size_t Grid::size() const {
  std::size_t n = 1;
  for (const Axis& a : axes) n *= a.n;
  return axes.empty() ? 0 : n;
}

double Grid::cell() const {
  double c = 1.0;
  for (const Axis& a : axes) c *= a.h;
  return c;
}

TestFunction polynomial(std::vector<double> coef) {
  return make_1d(
      "poly", [coef](double x) { return poly_eval(coef, x, 0); },
      [coef](double x) { return poly_eval(coef, x, 1); },
      [coef](double x) { return poly_eval(coef, x, 2); });
}

TestFunction poly_gaussian_bump(std::vector<double> coef, double width) {
  const double w2 = width * width;
  auto f = [coef, w2](double x) {
    return poly_eval(coef, x, 0) * std::exp(-x * x / (2.0 * w2));
  };
  auto f1 = [coef, w2](double x) {
    const double g = std::exp(-x * x / (2.0 * w2));
    return (poly_eval(coef, x, 1) - poly_eval(coef, x, 0) * x / w2) * g;
  };
  auto f2 = [coef, w2](double x) {
    const double g = std::exp(-x * x / (2.0 * w2));
    const double p = poly_eval(coef, x, 0);
    const double p1 = poly_eval(coef, x, 1);
    const double p2 = poly_eval(coef, x, 2);
    return (p2 - 2.0 * p1 * x / w2 + p * (x * x / (w2 * w2) - 1.0 / w2)) * g;
  };
  return make_1d("poly*gauss", f, f1, f2);
}

TestFunction poly_compact_bump(std::vector<double> coef, double radius) {
  // b(x) = exp(1 - 1/(1 - z^2)), z = x/R; with q = 1 - z^2,
  // (log b)' = -2z/(R q^2), (log b)'' = -(2 + 6 z^2)/(R^2 q^3).
  const double r = radius;
  auto bump = [r](double x, double& l1, double& l2) {
    const double z = x / r;
    const double q = 1.0 - z * z;
    if (q <= 0.0) {
      l1 = l2 = 0.0;
      return 0.0;
    }
    l1 = -2.0 * z / (r * q * q);
    l2 = -(2.0 + 6.0 * z * z) / (r * r * q * q * q);
    return std::exp(1.0 - 1.0 / q);
  };
  auto f = [coef, bump](double x) {
    double l1, l2;
    return poly_eval(coef, x, 0) * bump(x, l1, l2);
  };
  auto f1 = [coef, bump](double x) {
    double l1, l2;
    const double b = bump(x, l1, l2);
    if (b == 0.0) return 0.0;
    return (poly_eval(coef, x, 1) + poly_eval(coef, x, 0) * l1) * b;
  };
  auto f2 = [coef, bump](double x) {
    double l1, l2;
    const double b = bump(x, l1, l2);
    if (b == 0.0) return 0.0;
    const double p = poly_eval(coef, x, 0);
    return (poly_eval(coef, x, 2) + 2.0 * poly_eval(coef, x, 1) * l1 +
            p * (l2 + l1 * l1)) *
           b;
  };
  return make_1d("poly*bump", f, f1, f2);
}

TestFunction tensor_product(const TestFunction& f, const TestFunction& g) {
  if (f.dim != 1 || g.dim != 1) {
    throw LabError(ErrorKind::kInvalidDimension,
                   "tensor_product takes two 1D functions");
  }
  TestFunction u;
  u.dim = 2;
  u.name = f.name + "(x)" + g.name;
  u.value = [f, g](std::span<const double> x) {
    return f.value(x.subspan(0, 1)) * g.value(x.subspan(1, 1));
  };
  u.gradient = [f, g](std::span<const double> x, std::span<double> out) {
    double df = 0.0;
    double dg = 0.0;
    f.gradient(x.subspan(0, 1), {&df, 1});
    g.gradient(x.subspan(1, 1), {&dg, 1});
    out[0] = df * g.value(x.subspan(1, 1));
    out[1] = f.value(x.subspan(0, 1)) * dg;
  };
  return u;
}

QuadRule base_quadrature(const Factor1D& factor, int panels) {
  QuadRule rule = gauss_legendre(factor.window_lo, factor.window_hi, panels);
  std::vector<double> logw(rule.nodes.size());
  for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
    logw[q] = std::log(rule.weights[q]) + factor.log_density(rule.nodes[q]);
  }
  const double lz = log_sum_exp(logw);
  for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
    rule.weights[q] = std::exp(logw[q] - lz);
  }
  return rule;
}

SmoothedMeasure smooth(const MeasureModel& base, double s, Resolution res) {
  const Factor1D& factor = require_factor(base, 2);
  require_scale(s);
  const bool two = base.dim == 2;
  Profile1D p = profile_1d(factor, s, two ? res.nodes_2d : res.nodes,
                           two ? res.base_panels_2d : res.base_panels);
  SmoothedMeasure m;
  m.base = base;
  m.s = s;
  m.base_nodes = p.base.nodes;
  m.base_weights = p.base.weights;
  const double log_mass = std::log(p.mass);
  for (double& v : p.log_rho) v -= log_mass;
  m.mass_defect = std::abs(two ? p.mass * p.mass - 1.0 : p.mass - 1.0);
  m.grid.axes.assign(base.dim, p.axis);
  const std::size_t n = p.axis.n;
  if (two) {
    m.log_rho_s.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        m.log_rho_s[i * n + j] = p.log_rho[i] + p.log_rho[j];
      }
    }
  } else {
    m.log_rho_s = std::move(p.log_rho);
  }
  m.rho_s.resize(m.log_rho_s.size());
  m.mask.resize(m.log_rho_s.size());
  for (std::size_t k = 0; k < m.log_rho_s.size(); ++k) {
    m.rho_s[k] = std::exp(m.log_rho_s[k]);
    m.mask[k] = m.log_rho_s[k] > kLogFloor ? 1 : 0;
  }
  return m;
}

GridFunction tabulate(const Grid& grid, const TestFunction& u) {
  if (u.dim != grid.dim()) {
    throw LabError(ErrorKind::kInvalidDimension,
                   "test function and grid dimensions differ");
  }
  GridFunction g;
  g.grid = grid;
  g.values.resize(grid.size());
  if (grid.dim() == 1) {
    for (std::size_t i = 0; i < grid.axes[0].n; ++i) {
      const double x = grid.axes[0].node(i);
      g.values[i] = u.value({&x, 1});
    }
  } else {
    const Axis& a = grid.axes[0];
    const Axis& b = grid.axes[1];
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < b.n; ++j) {
        const double x[2] = {a.node(i), b.node(j)};
        g.values[i * b.n + j] = u.value(x);
      }
    }
  }
  return g;
}

GridFunction apply_P(const GridFunction& u, double s) {
  require_scale(s);
  if (u.grid.dim() == 0 || u.grid.dim() > 2) {
    throw LabError(ErrorKind::kGridBackendUnsupported,
                   "apply_P supports 1D and 2D grids");
  }
  if (u.values.size() != u.grid.size()) {
    throw LabError(ErrorKind::kInvalidDimension, "grid function shape mismatch");
  }
  const double reach = 8.0 * std::sqrt(s);
  // Kernel matrix per axis: trapezoid weights times the Gaussian density.
  auto kernel = [&](const Axis& a) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(a.n, a.n);
    const double norm = a.h / std::sqrt(2.0 * std::numbers::pi * s);
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < a.n; ++j) {
        const double d = a.node(i) - a.node(j);
        if (std::abs(d) > 1.5 * reach) continue;
        k(i, j) = trap(j, a.n) * norm * std::exp(-d * d / (2.0 * s));
      }
    }
    return k;
  };
  auto interior = [&](const Axis& a, std::size_t i) {
    const double x = a.node(i);
    return x - a.x0 >= reach && a.node(a.n - 1) - x >= reach;
  };
  GridFunction out;
  out.grid = u.grid;
  out.mask.assign(u.values.size(), 0);
  if (u.grid.dim() == 1) {
    const Axis& a = u.grid.axes[0];
    Eigen::Map<const Eigen::VectorXd> v(u.values.data(), a.n);
    Eigen::VectorXd r = kernel(a) * v;
    out.values.assign(r.data(), r.data() + a.n);
    for (std::size_t i = 0; i < a.n; ++i) out.mask[i] = interior(a, i);
  } else {
    const Axis& a = u.grid.axes[0];
    const Axis& b = u.grid.axes[1];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        v(u.values.data(), a.n, b.n);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r =
        kernel(a) * v * kernel(b).transpose();
    out.values.assign(r.data(), r.data() + a.n * b.n);
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < b.n; ++j) {
        out.mask[i * b.n + j] = interior(a, i) && interior(b, j);
      }
    }
  }
  if (!u.mask.empty()) {
    for (std::size_t k = 0; k < out.mask.size(); ++k) {
      out.mask[k] = out.mask[k] && u.mask[k];
    }
  }
  return out;
}

GridFunction apply_Q(const TestFunction& u, const SmoothedMeasure& m) {
  if (u.dim != m.grid.dim()) {
    throw LabError(ErrorKind::kInvalidDimension,
                   "test function and smoothed measure dimensions differ");
  }
  const QuadRule base{m.base_nodes, m.base_weights};
  const std::vector<double> ys = grid_nodes(m.grid.axes[0]);
  const Eigen::MatrixXd a = posterior_weights(base, m.s, ys);
  const std::size_t nq = base.nodes.size();
  GridFunction out;
  out.grid = m.grid;
  out.mask = m.mask;
  if (u.dim == 1) {
    Eigen::VectorXd uv(nq);
    for (std::size_t q = 0; q < nq; ++q) uv[q] = u.value({&base.nodes[q], 1});
    Eigen::VectorXd r = a * uv;
    out.values.assign(r.data(), r.data() + r.size());
  } else {
    Eigen::MatrixXd um(nq, nq);
    for (std::size_t q = 0; q < nq; ++q) {
      for (std::size_t r = 0; r < nq; ++r) {
        const double x[2] = {base.nodes[q], base.nodes[r]};
        um(q, r) = u.value(x);
      }
    }
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r =
        a * um * a.transpose();
    out.values.assign(r.data(), r.data() + r.size());
  }
  for (std::size_t k = 0; k < out.values.size(); ++k) {
    if (!out.mask[k]) out.values[k] = kNaN;
  }
  return out;
}

double apply_Q_at(const TestFunction& u, const SmoothedMeasure& m, double y) {
  if (u.dim != 1 || m.grid.dim() != 1) {
    throw LabError(ErrorKind::kInvalidDimension, "apply_Q_at is 1D only");
  }
  const QuadRule base{m.base_nodes, m.base_weights};
  const Eigen::MatrixXd a = posterior_weights(base, m.s, {y});
  double acc = 0.0;
  for (std::size_t q = 0; q < base.nodes.size(); ++q) {
    acc += a(0, q) * u.value({&base.nodes[q], 1});
  }
  return acc;
}

double apply_Q_derivative_at(const TestFunction& u, const SmoothedMeasure& m,
                             double y) {
  if (u.dim != 1 || m.grid.dim() != 1) {
    throw LabError(ErrorKind::kInvalidDimension,
                   "apply_Q_derivative_at is 1D only");
  }
  const QuadRule base{m.base_nodes, m.base_weights};
  const Eigen::MatrixXd a = posterior_weights(base, m.s, {y});
  double eu = 0.0, ex = 0.0, eux = 0.0;
  for (std::size_t q = 0; q < base.nodes.size(); ++q) {
    const double x = base.nodes[q];
    const double v = u.value({&x, 1});
    eu += a(0, q) * v;
    ex += a(0, q) * x;
    eux += a(0, q) * v * x;
  }
  return (eux - eu * ex) / m.s;
}

IdentityResult adjointness_check(const MeasureModel& base, const TestFunction& u,
                                 const TestFunction& v, double s,
                                 Resolution res, double tol) {
  require_factor(base, 1);
  const SmoothedMeasure m = smooth(base, s, res);
  const GridFunction q = apply_Q(u, m);
  const GridFunction vt = tabulate(m.grid, v);
  std::vector<double> prod(q.values.size());
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = q.values[i] * vt.values[i];
  const double lhs = integrate(m, prod);
  // P_s v at the base nodes by the trapezoid rule on the mu_s grid, which
  // extends 8 sqrt(s) past the base window.
  const Axis& ax = m.grid.axes[0];
  const double norm = ax.h / std::sqrt(2.0 * std::numbers::pi * s);
  CompensatedSum rhs;
  for (std::size_t k = 0; k < m.base_nodes.size(); ++k) {
    const double x = m.base_nodes[k];
    CompensatedSum pv;
    for (std::size_t i = 0; i < ax.n; ++i) {
      const double d = x - ax.node(i);
      pv.add(trap(i, ax.n) * vt.values[i] * std::exp(-d * d / (2.0 * s)));
    }
    rhs.add(m.base_weights[k] * u.value({&x, 1}) * pv.value() * norm);
  }
  return make_result("Q", base, s, lhs, rhs.value(), tol);
}

double integrate(const SmoothedMeasure& m, std::span<const double> f) {
  if (f.size() != m.rho_s.size()) {
    throw LabError(ErrorKind::kInvalidDimension, "integrand shape mismatch");
  }
  CompensatedSum acc;
  if (m.grid.dim() == 1) {
    const std::size_t n = m.grid.axes[0].n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!m.mask[i] || !std::isfinite(f[i])) continue;
      acc.add(trap(i, n) * f[i] * m.rho_s[i]);
    }
  } else {
    const std::size_t na = m.grid.axes[0].n;
    const std::size_t nb = m.grid.axes[1].n;
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t j = 0; j < nb; ++j) {
        const std::size_t k = i * nb + j;
        if (!m.mask[k] || !std::isfinite(f[k])) continue;
        acc.add(trap(i, na) * trap(j, nb) * f[k] * m.rho_s[k]);
      }
    }
  }
  return acc.value() * m.grid.cell();
}

StReport check_st_correspondence(const MeasureModel& base,
                                 const TestFunction& u, double t,
                                 std::size_t paths, std::uint64_t seed,
                                 Resolution res) {
  const Factor1D& factor = require_factor(base, 1);
  if (!(t > 0.0)) {
    throw LabError(ErrorKind::kInvalidScale, "time must be positive", t);
  }
  if (paths < 2) {
    throw LabError(ErrorKind::kEmptyEnsemble, "need at least two paths");
  }
  const double s = 1.0 / t;
  const SmoothedMeasure m = smooth(base, s, res);
  auto u1 = [&u](double x) { return u.value({&x, 1}); };

  // Pointwise comparison over the bulk of mu_s.
  const double peak = *std::max_element(m.rho_s.begin(), m.rho_s.end());
  const Axis& ax = m.grid.axes[0];
  double ya = ax.node(ax.n - 1), yb = ax.node(0);
  for (std::size_t i = 0; i < ax.n; ++i) {
    if (m.rho_s[i] >= 1e-3 * peak) {
      ya = std::min(ya, ax.node(i));
      yb = std::max(yb, ax.node(i));
    }
  }
  StReport rep;
  rep.points = 41;
  double worst = 0.0, scale = 1.0;
  double worst_lhs = 0.0, worst_rhs = 0.0;
  for (std::size_t k = 0; k < rep.points; ++k) {
    const double y = ya + (yb - ya) * static_cast<double>(k) /
                              static_cast<double>(rep.points - 1);
    const double lhs = TiltedQuadrature(factor, t, t * y).expect(u1);
    const double rhs = apply_Q_at(u, m, y);
    scale = std::max(scale, std::abs(rhs));
    if (std::abs(lhs - rhs) >= worst) {
      worst = std::abs(lhs - rhs);
      worst_lhs = lhs;
      worst_rhs = rhs;
    }
  }
  rep.max_pointwise_err = worst;
  rep.pointwise = make_result("st", base, s, worst_lhs, worst_rhs, 1e-6);
  rep.pointwise.rel_err = worst / scale;
  rep.pointwise.pass = rep.pointwise.rel_err <= 1e-6;

  // Distributional comparison: theta_t = t X + B_t.
  std::vector<double> vals(paths);
  parallel_for(paths, [&](std::size_t p) {
    Philox rng(stream_key(seed, p));
    const double x = factor.sample(rng);
    const double theta = t * x + std::sqrt(t) * rng.normal();
    const double a = TiltedQuadrature(factor, t, theta).expect(u1);
    vals[p] = a * a;
  });
  const MeanSe mc = mean_se(vals);
  const GridFunction q = apply_Q(u, m);
  std::vector<double> q2(q.values.size());
  for (std::size_t i = 0; i < q2.size(); ++i) q2[i] = q.values[i] * q.values[i];
  const double grid = integrate(m, q2);
  rep.mc_se = mc.se;
  rep.distributional = make_result("Qq", base, s, mc.mean, grid, 0.0);
  const double allowed = 3.0 * mc.se + 1e-9 * std::max(1.0, std::abs(grid));
  rep.distributional.tolerance = allowed / std::max(std::abs(grid), 1e-300);
  rep.distributional.pass = rep.distributional.abs_err <= allowed;
  rep.pass = rep.pointwise.pass && rep.distributional.pass;
  return rep;
}

IdentityResult variance_identity_check(const MeasureModel& base, double s,
                                       Resolution res) {
  if (!base.factor) {
    throw LabError(ErrorKind::kGridBackendUnsupported,
                   "variance identity needs a product base");
  }
  require_scale(s);
  const Factor1D& f = *base.factor;
  const double n = static_cast<double>(base.dim);
  // One-dimensional moments of mu_s on the grid and of mu by quadrature.
  const SmoothedMeasure m = smooth(make_product(f, 1, base.key), s, res);
  const Axis& ax = m.grid.axes[0];
  std::vector<double> y2(ax.n), y4(ax.n);
  for (std::size_t i = 0; i < ax.n; ++i) {
    const double y = ax.node(i);
    y2[i] = y * y;
    y4[i] = y2[i] * y2[i];
  }
  const double m2s = integrate(m, y2);
  const double m4s = integrate(m, y4);
  double m2 = 0.0, m4 = 0.0;
  for (std::size_t q = 0; q < m.base_nodes.size(); ++q) {
    const double x2 = m.base_nodes[q] * m.base_nodes[q];
    m2 += m.base_weights[q] * x2;
    m4 += m.base_weights[q] * x2 * x2;
  }
  const double lhs =
      n * (m4s - m2s * m2s) + n * n * (m2s - (1.0 + s)) * (m2s - (1.0 + s));
  const double rhs = n * (m4 - m2 * m2) + n * n * (m2 - 1.0) * (m2 - 1.0) +
                     2.0 * (s * s + 2.0 * s) * n;
  return make_result("cn", base, s, lhs, rhs, 1e-4);
}

HessianWindowReport hessian_window_check(const MeasureModel& base, double s,
                                         Resolution res, double slack) {
  const Factor1D& factor = require_factor(base, 2);
  const SmoothedMeasure m = smooth(base, s, res);
  HessianWindowReport rep;
  rep.s = s;
  rep.min_hessian = std::numeric_limits<double>::infinity();
  rep.max_hessian = -std::numeric_limits<double>::infinity();
  rep.worst_lower_slack = std::numeric_limits<double>::infinity();
  rep.worst_upper_slack = std::numeric_limits<double>::infinity();
  const double inv_s = 1.0 / s;
  const std::vector<double>& l = m.log_rho_s;

  auto record = [&](double lo_eig, double hi_eig, double err) {
    rep.min_hessian = std::min(rep.min_hessian, lo_eig);
    rep.max_hessian = std::max(rep.max_hessian, hi_eig);
    rep.worst_lower_slack =
        std::min(rep.worst_lower_slack, lo_eig + inv_s + err);
    rep.worst_upper_slack = std::min(rep.worst_upper_slack, err - hi_eig);
    ++rep.nodes_checked;
  };

  if (base.dim == 1) {
    const std::size_t n = l.size();
    const double h = m.grid.axes[0].h;
    for (std::size_t i = 2; i + 2 < n; ++i) {
      bool ok = true;
      for (std::size_t k = i - 2; k <= i + 2; ++k) ok = ok && m.mask[k];
      if (!ok) continue;
      const double fine = (l[i + 1] - 2.0 * l[i] + l[i - 1]) / (h * h);
      const double coarse = (l[i + 2] - 2.0 * l[i] + l[i - 2]) / (4.0 * h * h);
      record(fine, fine, std::abs(fine - coarse) / 3.0);
    }
  } else {
    const std::size_t na = m.grid.axes[0].n;
    const std::size_t nb = m.grid.axes[1].n;
    const double ha = m.grid.axes[0].h;
    const double hb = m.grid.axes[1].h;
    auto at = [&](std::size_t i, std::size_t j) { return l[i * nb + j]; };
    auto hess = [&](std::size_t i, std::size_t j, std::size_t st) {
      const double da = ha * static_cast<double>(st);
      const double db = hb * static_cast<double>(st);
      Eigen::Matrix2d hm;
      hm(0, 0) = (at(i + st, j) - 2.0 * at(i, j) + at(i - st, j)) / (da * da);
      hm(1, 1) = (at(i, j + st) - 2.0 * at(i, j) + at(i, j - st)) / (db * db);
      hm(0, 1) = hm(1, 0) = (at(i + st, j + st) - at(i + st, j - st) -
                             at(i - st, j + st) + at(i - st, j - st)) /
                            (4.0 * da * db);
      return hm;
    };
    for (std::size_t i = 2; i + 2 < na; ++i) {
      for (std::size_t j = 2; j + 2 < nb; ++j) {
        bool ok = true;
        for (std::size_t a = i - 2; a <= i + 2 && ok; ++a) {
          for (std::size_t b = j - 2; b <= j + 2; ++b) ok = ok && m.mask[a * nb + b];
        }
        if (!ok) continue;
        const Eigen::Matrix2d fine = hess(i, j, 1);
        const Eigen::Matrix2d coarse = hess(i, j, 2);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(fine,
                                                          Eigen::EigenvaluesOnly);
        // Spectral norm of the difference bounds the eigenvalue error.
        const double err = (fine - coarse).cwiseAbs().sum() / 3.0;
        record(es.eigenvalues()(0), es.eigenvalues()(1), err);
      }
    }
  }
  rep.window_pass = rep.nodes_checked > 0 && rep.worst_lower_slack >= -slack &&
                    rep.worst_upper_slack >= -slack;

  rep.theta_applicable = factor.smooth && std::isinf(factor.lo) &&
                         std::isinf(factor.hi);
  if (rep.theta_applicable) {
    const QuadRule q = base_quadrature(factor, res.base_panels);
    double fisher = 0.0;
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      fisher -= q.weights[k] * factor.d2(q.nodes[k]);
    }
    // For a product base the quadratic form is fisher * |theta|^2.
    Philox rng(0x7468657461ULL);
    for (int d = 0; d < 8; ++d) {
      std::vector<double> th(base.dim);
      double norm = 0.0;
      for (double& v : th) {
        v = rng.normal();
        norm += v * v;
      }
      double val = 0.0;
      for (double v : th) val += v * v / norm * fisher;
      rep.theta_values.push_back(val);
      rep.theta_pass = rep.theta_pass && val >= 1.0 - slack;
    }
  }
  rep.pass = rep.window_pass && rep.theta_pass;
  return rep;
}

IdentityResult gradient_contraction_check(const MeasureModel& base,
                                          const TestFunction& u, double s,
                                          Resolution res, double slack) {
  require_factor(base, 2);
  const SmoothedMeasure m = smooth(base, s, res);
  const GridFunction q = apply_Q(u, m);
  std::vector<double> energy(q.values.size(), kNaN);
  if (base.dim == 1) {
    std::vector<double> d1, d2;
    differences(q.values, q.mask, m.grid.axes[0].h, 1, d1, d2);
    for (std::size_t i = 0; i < d1.size(); ++i) energy[i] = d1[i] * d1[i];
  } else {
    const std::size_t na = m.grid.axes[0].n;
    const std::size_t nb = m.grid.axes[1].n;
    const double ha = m.grid.axes[0].h;
    const double hb = m.grid.axes[1].h;
    for (std::size_t i = 1; i + 1 < na; ++i) {
      for (std::size_t j = 1; j + 1 < nb; ++j) {
        const std::size_t k = i * nb + j;
        const double ga = (q.values[k + nb] - q.values[k - nb]) / (2.0 * ha);
        const double gb = (q.values[k + 1] - q.values[k - 1]) / (2.0 * hb);
        energy[k] = ga * ga + gb * gb;  // NaN propagates from masked neighbours
      }
    }
  }
  const double lhs = integrate(m, energy);
  double rhs = 0.0;
  const std::size_t nq = m.base_nodes.size();
  if (base.dim == 1) {
    for (std::size_t k = 0; k < nq; ++k) {
      double g = 0.0;
      u.gradient({&m.base_nodes[k], 1}, {&g, 1});
      rhs += m.base_weights[k] * g * g;
    }
  } else {
    for (std::size_t a = 0; a < nq; ++a) {
      for (std::size_t b = 0; b < nq; ++b) {
        const double x[2] = {m.base_nodes[a], m.base_nodes[b]};
        double g[2];
        u.gradient(x, g);
        rhs += m.base_weights[a] * m.base_weights[b] * (g[0] * g[0] + g[1] * g[1]);
      }
    }
  }
  IdentityResult r = make_result("KP", base, s, lhs, rhs, slack);
  r.pass = lhs <= rhs + slack;
  return r;
}

namespace {

struct BochnerPieces {
  double boc_lhs = 0.0, boc_rhs = 0.0;
  double gat_rec = 0.0, gat_closed = 0.0;
  double dirichlet = 0.0;  // int |D Q_s u|^2 dmu_s
  double gamma2_q = 0.0;   // int Gamma_2(Q_s u) dmu_s
  double energy0 = 0.0;    // int (Q_s u)^2 dmu_s
};

BochnerPieces bochner_pieces(const MeasureModel& base, const TestFunction& u,
                             double s, Resolution res) {
  const SmoothedMeasure m = smooth(base, s, res);
  const Axis& ax = m.grid.axes[0];
  const double h = ax.h;
  const std::size_t n = ax.n;
  std::vector<double> lr1, lr2;
  differences(m.log_rho_s, m.mask, h, 1, lr1, lr2);

  std::vector<double> u1(n), u2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ax.node(i);
    u.gradient({&x, 1}, {&u1[i], 1});
    u2[i] = u.d2(x);
  }
  BochnerPieces p;
  std::vector<double> a(n), b(n);
  // Bochner: L_s u = u'' + (log rho_s)' u'.
  for (std::size_t i = 0; i < n; ++i) {
    const double lu = u2[i] + lr1[i] * u1[i];
    a[i] = lu * lu;
    b[i] = u2[i] * u2[i] - lr2[i] * u1[i] * u1[i];
  }
  p.boc_lhs = integrate(m, a);
  p.boc_rhs = integrate(m, b);

  // Gamma_2 through the recursion with Box = D^2/2 + (log rho_s)' D.
  std::vector<double> g1(n), box_u(n), g1_d1, g1_d2, bu_d1, bu_d2;
  for (std::size_t i = 0; i < n; ++i) {
    g1[i] = u1[i] * u1[i];
    box_u[i] = 0.5 * u2[i] + lr1[i] * u1[i];
  }
  std::vector<char> valid(n);
  for (std::size_t i = 0; i < n; ++i) valid[i] = m.mask[i] && std::isfinite(lr1[i]);
  differences(g1, valid, h, 1, g1_d1, g1_d2);
  differences(box_u, valid, h, 1, bu_d1, bu_d2);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = 0.5 * g1_d2[i] + lr1[i] * g1_d1[i] - 2.0 * u1[i] * bu_d1[i];
    b[i] = u2[i] * u2[i] - 2.0 * lr2[i] * u1[i] * u1[i];
  }
  p.gat_rec = integrate(m, a);
  p.gat_closed = integrate(m, b);

  // Dissipation pieces for v = Q_s u.
  const GridFunction q = apply_Q(u, m);
  std::vector<double> v1, v2;
  differences(q.values, q.mask, h, 1, v1, v2);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = q.values[i] * q.values[i];
    b[i] = v1[i] * v1[i];
  }
  p.energy0 = integrate(m, a);
  p.dirichlet = integrate(m, b);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = v2[i] * v2[i] - 2.0 * lr2[i] * v1[i] * v1[i];
  }
  p.gamma2_q = integrate(m, a);
  return p;
}

struct BochnerLevel {
  std::array<double, 4> lhs{}, rhs{};
};

BochnerLevel bochner_level(const MeasureModel& base, const TestFunction& u,
                           double s, Resolution res, double ds) {
  const BochnerPieces mid = bochner_pieces(base, u, s, res);
  const BochnerPieces up = bochner_pieces(base, u, s + ds, res);
  const BochnerPieces dn = bochner_pieces(base, u, s - ds, res);
  BochnerLevel lv;
  lv.lhs = {mid.boc_lhs, mid.gat_rec, (up.energy0 - dn.energy0) / (2.0 * ds),
            (up.dirichlet - dn.dirichlet) / (2.0 * ds)};
  lv.rhs = {mid.boc_rhs, mid.gat_closed, -mid.dirichlet, -mid.gamma2_q};
  return lv;
}

}  // namespace

BochnerReport bochner_gamma2_check(const SmoothedMeasure& smoothed,
                                   const TestFunction& u, double rel_tol,
                                   double floor) {
  if (smoothed.grid.dim() != 1 || u.dim != 1 || !u.d2) {
    throw LabError(ErrorKind::kGridBackendUnsupported,
                   "Bochner and Gamma_2 checks run on 1D grids");
  }
  const MeasureModel& base = smoothed.base;
  const double s = smoothed.s;
  const std::size_t nodes = smoothed.grid.axes[0].n;
  const int panels = static_cast<int>(smoothed.base_nodes.size() / 16);
  Resolution coarse{nodes, panels};
  Resolution fine{2 * nodes - 1, panels};
  const double ds = 0.02 * s;
  const BochnerLevel lc = bochner_level(base, u, s, coarse, ds);
  const BochnerLevel lf = bochner_level(base, u, s, fine, 0.5 * ds);

  BochnerReport rep;
  const char* names[4] = {"boc", "gat", "di0", "di1"};
  IdentityResult* slots[4] = {&rep.bochner, &rep.gamma2, &rep.dissipation0,
                              &rep.dissipation1};
  rep.pass = true;
  for (int k = 0; k < 4; ++k) {
    IdentityResult r = make_result(names[k], base, s, lf.lhs[k], lf.rhs[k], rel_tol);
    const double scale = std::max({std::abs(lf.lhs[k]), std::abs(lf.rhs[k]), 1.0});
    rep.coarse_err[k] = std::abs(lc.lhs[k] - lc.rhs[k]);
    rep.fine_err[k] = std::abs(lf.lhs[k] - lf.rhs[k]);
    rep.refinement[k] = rep.fine_err[k] > 0.0
                            ? rep.coarse_err[k] / rep.fine_err[k]
                            : std::numeric_limits<double>::infinity();
    const bool at_floor = rep.fine_err[k] <= floor * scale;
    r.pass = at_floor || (r.rel_err <= rel_tol && rep.refinement[k] >= 3.0);
    *slots[k] = r;
    rep.pass = rep.pass && r.pass;
  }
  return rep;
}

ProjectionReport projection_ulc_check(const Density2D& density, double t,
                                      std::array<double, 2> direction,
                                      bool certify_input, double slack) {
  if (!(t > 0.0)) {
    throw LabError(ErrorKind::kInvalidScale, "t must be positive", t);
  }
  const double vn = std::hypot(direction[0], direction[1]);
  if (!(vn > 0.0)) {
    throw LabError(ErrorKind::kInvalidDimension, "direction must be nonzero");
  }
  const double v0 = direction[0] / vn, v1 = direction[1] / vn;
  const auto [xlo, xhi, ylo, yhi] = density.box;
  ProjectionReport rep;
  rep.t = t;

  // Input certificate: second differences of phi - t|x|^2 along a fan of
  // directions must be nonnegative (discrete convexity).
  {
    const std::size_t n = 161;
    const double hx = (xhi - xlo) / static_cast<double>(n - 1);
    const double hy = (yhi - ylo) / static_cast<double>(n - 1);
    const double step = 0.5 * std::min(hx, hy);
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < n; ++i) {
      for (std::size_t j = 1; j + 1 < n; ++j) {
        const double x = xlo + hx * static_cast<double>(i);
        const double y = ylo + hy * static_cast<double>(j);
        const double phi0 = -density.log_density(x, y);
        for (int d = 0; d < 8; ++d) {
          const double ang = std::numbers::pi * d / 8.0;
          const double cx = std::cos(ang) * step, cy = std::sin(ang) * step;
          const double second = (-density.log_density(x + cx, y + cy) - 2.0 * phi0 -
                                 density.log_density(x - cx, y - cy)) /
                                (step * step);
          worst = std::min(worst, second);
        }
      }
    }
    rep.min_input_curvature = worst;
    if (certify_input && worst < 2.0 * t - slack) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     density.name + ": input is not t-uniformly log-concave "
                                    "(min curvature " +
                         format_double(worst) + " < 2t)",
                     worst);
    }
  }

  // Marginal along v: integrate over the segment {z v + r w} inside the box.
  const double w0 = -v1, w1 = v0;
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
  for (double x : {xlo, xhi}) {
    for (double y : {ylo, yhi}) {
      zmin = std::min(zmin, x * v0 + y * v1);
      zmax = std::max(zmax, x * v0 + y * v1);
    }
  }
  auto log_marginal = [&](double z) {
    double rlo = -std::numeric_limits<double>::infinity(), rhi = -rlo;
    auto clip = [&](double p, double dir, double lo, double hi) {
      if (std::abs(dir) < 1e-15) {
        if (p < lo || p > hi) rhi = rlo - 1.0;
        return;
      }
      double a = (lo - p) / dir, b = (hi - p) / dir;
      if (a > b) std::swap(a, b);
      rlo = std::max(rlo, a);
      rhi = std::min(rhi, b);
    };
    clip(z * v0, w0, xlo, xhi);
    clip(z * v1, w1, ylo, yhi);
    if (!(rhi > rlo)) return -std::numeric_limits<double>::infinity();
    const QuadRule q = gauss_legendre(rlo, rhi, 24);
    std::vector<double> terms(q.nodes.size());
    for (std::size_t k = 0; k < q.nodes.size(); ++k) {
      const double r = q.nodes[k];
      terms[k] = std::log(q.weights[k]) +
                 density.log_density(z * v0 + r * w0, z * v1 + r * w1);
    }
    return log_sum_exp(terms);
  };
  const std::size_t nz = 401;
  const double za = zmin + 0.05 * (zmax - zmin);
  const double zb = zmax - 0.05 * (zmax - zmin);
  const double hz = (zb - za) / static_cast<double>(nz - 1);
  std::vector<double> lm(nz);
  parallel_for(nz, [&](std::size_t i) {
    lm[i] = log_marginal(za + hz * static_cast<double>(i));
  });
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 2; i + 2 < nz; ++i) {
    if (lm[i] < kLogFloor) continue;
    const double fine = -(lm[i + 1] - 2.0 * lm[i] + lm[i - 1]) / (hz * hz);
    const double coarse = -(lm[i + 2] - 2.0 * lm[i] + lm[i - 2]) / (4.0 * hz * hz);
    worst = std::min(worst, fine + std::abs(fine - coarse) / 3.0);
    ++rep.nodes_checked;
  }
  rep.min_marginal_curvature = worst;
  rep.pass = rep.nodes_checked > 0 && worst >= 2.0 * t - slack;
  return rep;
}

std::vector<Density2D> ulc_test_family(std::size_t count, double t,
                                       std::uint64_t seed) {
  std::vector<Density2D> out;
  for (std::size_t i = 0; i < count; ++i) {
    Philox rng(stream_key(seed, i));
    // P = 2t I + R R^T keeps the quadratic part at least 2t-convex.
    const double r00 = rng.normal(), r01 = rng.normal(), r11 = rng.normal();
    const double p00 = 2.0 * t + r00 * r00;
    const double p01 = r00 * r01;
    const double p11 = 2.0 * t + r01 * r01 + r11 * r11;
    const int kind = static_cast<int>(i % 3);
    const double alpha = 0.5 + rng.uniform();
    const double a0 = rng.normal(), a1 = rng.normal();
    const double beta = 0.02 * rng.uniform();
    Density2D d;
    d.name = "ulc-" + std::to_string(i);
    d.log_density = [=](double x, double y) {
      double phi = 0.5 * (p00 * x * x + 2.0 * p01 * x * y + p11 * y * y);
      if (kind >= 1) phi += alpha * std::log(std::cosh(a0 * x + a1 * y));
      if (kind == 2) {
        const double z = a1 * x - a0 * y;
        phi += beta * z * z * z * z;
      }
      return -phi;
    };
    d.box = {-6.0, 6.0, -6.0, 6.0};
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace sllab

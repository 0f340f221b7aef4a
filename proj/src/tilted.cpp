#include "sllab/tilted.hpp"

#include <cmath>
#include <limits>

#include "sllab/error.hpp"
#include "sllab/numerics.hpp"

namespace sllab {

namespace {

double find_mode(const Factor1D& f, double t, double theta) {
  auto slope = [&](double x) { return f.d1(x) + theta - t * x; };
  if (std::isfinite(f.lo) && slope(f.lo) <= 0.0) return f.lo;
  if (std::isfinite(f.hi) && slope(f.hi) >= 0.0) return f.hi;

  double x0 = 0.0;
  if (x0 <= f.lo || x0 >= f.hi) {
    x0 = std::isfinite(f.lo) && std::isfinite(f.hi) ? 0.5 * (f.lo + f.hi)
         : std::isfinite(f.lo)                      ? f.lo + 1.0
                                                    : f.hi - 1.0;
  }
  double a = x0;
  double b = x0;
  double step = 1.0;
  if (slope(x0) > 0.0) {
    for (int i = 0;; ++i) {
      if (i > 200) {
        throw LabError(ErrorKind::kDegenerateTilt,
                       "tilted density is not integrable (no mode to the right)");
      }
      b = x0 + step;
      if (b >= f.hi) {
        b = f.hi;
        break;
      }
      if (slope(b) < 0.0) break;
      a = b;
      step *= 2.0;
    }
  } else {
    for (int i = 0;; ++i) {
      if (i > 200) {
        throw LabError(ErrorKind::kDegenerateTilt,
                       "tilted density is not integrable (no mode to the left)");
      }
      a = x0 - step;
      if (a <= f.lo) {
        a = f.lo;
        break;
      }
      if (slope(a) > 0.0) break;
      b = a;
      step *= 2.0;
    }
  }

  // Safeguarded Newton on the decreasing slope.
  double x = 0.5 * (a + b);
  for (int it = 0; it < 200 && b - a > 1e-15 * (1.0 + std::abs(x)); ++it) {
    const double g = slope(x);
    if (g > 0.0) a = x; else if (g < 0.0) b = x; else return x;
    const double curv = f.d2(x) - t;
    double next = curv < 0.0 ? x - g / curv : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) < 1e-15 * (1.0 + std::abs(x))) return next;
    x = next;
  }
  return x;
}

}  // namespace

TiltedQuadrature::TiltedQuadrature(const Factor1D& f, double t, double theta,
                                   int panels, double drop) {
  if (t < 0.0 || !std::isfinite(t) || !std::isfinite(theta)) {
    throw LabError(ErrorKind::kDegenerateTilt, "invalid tilt parameters");
  }
  auto psi = [&](double x) {
    return f.log_density(x) + theta * x - 0.5 * t * x * x;
  };
  mode_ = find_mode(f, t, theta);
  const double psi_mode = psi(mode_);

  const double curv = t - f.d2(mode_);
  const double slope = std::abs(f.d1(mode_) + theta - t * mode_);
  double scale = std::numeric_limits<double>::infinity();
  if (curv > 0.0) scale = 1.0 / std::sqrt(curv);
  if (slope > 0.0) scale = std::min(scale, 1.0 / slope);
  if (!std::isfinite(scale)) scale = 1.0;

  auto reach = [&](double dir, double bound) {
    double d = scale;
    for (int i = 0; i < 400; ++i) {
      const double x = mode_ + dir * d;
      if ((dir > 0 && x >= bound) || (dir < 0 && x <= bound)) return bound;
      if (psi(x) < psi_mode - drop) return x;
      d *= 2.0;
    }
    throw LabError(ErrorKind::kDegenerateTilt,
                   "tilted density does not decay inside the support");
  };
  const double lo = mode_ <= f.lo ? f.lo : reach(-1.0, f.lo);
  const double hi = mode_ >= f.hi ? f.hi : reach(1.0, f.hi);

  QuadRule rule = gauss_legendre(lo, hi, panels);
  nodes_ = std::move(rule.nodes);
  weights_.resize(nodes_.size());
  double total = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    weights_[i] = rule.weights[i] * std::exp(psi(nodes_[i]) - psi_mode);
    total += weights_[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw LabError(ErrorKind::kDegenerateTilt, "tilted quadrature has no mass");
  }
  for (double& w : weights_) w /= total;
  log_z_ = psi_mode + std::log(total);
}

double TiltedQuadrature::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    m += weights_[i] * (nodes_[i] - mode_);
  }
  return mode_ + m;
}

TiltedMoments1D TiltedQuadrature::moments() const {
  TiltedMoments1D out;
  out.log_z = log_z_;
  double shift = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    shift += weights_[i] * (nodes_[i] - mode_);
  }
  out.mean = mode_ + shift;
  double m2 = 0.0;
  double m3 = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const double y = (nodes_[i] - mode_) - shift;
    m2 += weights_[i] * y * y;
    m3 += weights_[i] * y * y * y;
  }
  out.var = m2;
  out.third = m3;
  return out;
}

double TiltedQuadrature::expect(const std::function<double(double)>& u) const {
  double s = 0.0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) s += weights_[i] * u(nodes_[i]);
  return s;
}

}  // namespace sllab

#include "sllab/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sllab/error.hpp"
#include "sllab/tilted.hpp"

namespace sllab {

Eigen::VectorXd PosteriorEngine::mean(double t,
                                      const Eigen::VectorXd& theta) const {
  return moments(t, theta).barycenter;
}

// ---------------------------------------------------------------- pool ----

PoolPosterior::PoolPosterior(std::shared_ptr<const SamplePool> pool,
                             double ess_floor)
    : pool_(std::move(pool)), ess_floor_(ess_floor) {
  if (!pool_ || pool_->count == 0) {
    throw LabError(ErrorKind::kEmptyEnsemble, "empty sample pool");
  }
  norm_sq_.resize(pool_->count);
  for (std::size_t i = 0; i < pool_->count; ++i) {
    double s = 0.0;
    for (double v : pool_->point(i)) s += v * v;
    norm_sq_[i] = s;
  }
}

std::vector<double> PoolPosterior::weights(double t,
                                           const Eigen::VectorXd& theta,
                                           double* ess) const {
  const std::size_t n = pool_->dim;
  if (static_cast<std::size_t>(theta.size()) != n) {
    throw LabError(ErrorKind::kInvalidDimension, "theta has wrong dimension");
  }
  std::vector<double> w(pool_->count);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) dot += theta[k] * x[k];
    w[i] = dot - 0.5 * t * norm_sq_[i];
    top = std::max(top, w[i]);
  }
  if (!std::isfinite(top)) {
    throw LabError(ErrorKind::kDegenerateTilt, "non-finite log weights", 0.0);
  }
  double s1 = 0.0;
  double s2 = 0.0;
  for (double& v : w) {
    v = std::exp(v - top);
    s1 += v;
    s2 += v * v;
  }
  const double e = s1 * s1 / s2;
  if (ess) *ess = e;
  if (e < ess_floor_) {
    std::ostringstream msg;
    msg << "effective sample size " << e << " below floor " << ess_floor_
        << " at t=" << t;
    throw LabError(ErrorKind::kDegenerateTilt, msg.str(), e);
  }
  for (double& v : w) v /= s1;
  return w;
}

TiltState PoolPosterior::moments(double t, const Eigen::VectorXd& theta) const {
  const std::size_t n = pool_->dim;
  double ess = 0.0;
  const std::vector<double> w = weights(t, theta, &ess);
  TiltState st;
  st.t = t;
  st.theta = theta;
  st.ess = ess;
  st.barycenter = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) st.barycenter[k] += w[i] * x[k];
  }
  st.covariance = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd z(n);
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) z[k] = x[k] - st.barycenter[k];
    st.covariance.noalias() += w[i] * z * z.transpose();
  }
  // Delta-method SE of the top eigenvalue: lambda = sum_i w_i (v.z_i)^2.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.covariance);
  const Eigen::VectorXd v = es.eigenvectors().col(n - 1);
  const double lam = es.eigenvalues()[n - 1];
  double var = 0.0;
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    double proj = 0.0;
    for (std::size_t k = 0; k < n; ++k) proj += v[k] * (x[k] - st.barycenter[k]);
    const double d = proj * proj - lam;
    var += w[i] * w[i] * d * d;
  }
  st.lambda_max_se = std::sqrt(var);
  return st;
}

Eigen::VectorXd PoolPosterior::mean(double t,
                                    const Eigen::VectorXd& theta) const {
  const std::size_t n = pool_->dim;
  const std::vector<double> w = weights(t, theta, nullptr);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) a[k] += w[i] * x[k];
  }
  return a;
}

namespace {

// Fills all permutations of (i, j, k) from the i <= j <= k entry.
void symmetrize(std::vector<double>& e, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      for (std::size_t k = j; k < n; ++k) {
        const double v = e[(i * n + j) * n + k];
        const std::size_t idx[6][3] = {{i, j, k}, {i, k, j}, {j, i, k},
                                       {j, k, i}, {k, i, j}, {k, j, i}};
        for (const auto& p : idx) e[(p[0] * n + p[1]) * n + p[2]] = v;
      }
}

void require_tensor_dim(std::size_t n) {
  if (n > 6) {
    throw LabError(ErrorKind::kDimensionTooLarge,
                   "third-moment tensors limited to dim <= 6");
  }
}

}  // namespace

ThirdMomentTensor PoolPosterior::third_in_basis(
    double t, const Eigen::VectorXd& theta, const Eigen::MatrixXd& basis) const {
  const std::size_t n = pool_->dim;
  require_tensor_dim(n);
  const std::vector<double> w = weights(t, theta, nullptr);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < pool_->count; ++i) {
    const double* x = pool_->points.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) a[k] += w[i] * x[k];
  }
  ThirdMomentTensor out;
  out.n = n;
  out.t = t;
  out.entries.assign(n * n * n, 0.0);
  out.se.assign(n * n * n, 0.0);
  Eigen::VectorXd z(n);
  Eigen::VectorXd y(n);
  for (std::size_t m = 0; m < pool_->count; ++m) {
    const double* x = pool_->points.data() + m * n;
    for (std::size_t k = 0; k < n; ++k) z[k] = x[k] - a[k];
    y.noalias() = basis.transpose() * z;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        for (std::size_t k = j; k < n; ++k)
          out.entries[(i * n + j) * n + k] += w[m] * y[i] * y[j] * y[k];
  }
  for (std::size_t m = 0; m < pool_->count; ++m) {
    const double* x = pool_->points.data() + m * n;
    for (std::size_t k = 0; k < n; ++k) z[k] = x[k] - a[k];
    y.noalias() = basis.transpose() * z;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        for (std::size_t k = j; k < n; ++k) {
          const std::size_t idx = (i * n + j) * n + k;
          const double d = y[i] * y[j] * y[k] - out.entries[idx];
          out.se[idx] += w[m] * w[m] * d * d;
        }
  }
  for (double& v : out.se) v = std::sqrt(v);
  symmetrize(out.entries, n);
  symmetrize(out.se, n);
  return out;
}

TiltState posterior_moments(const SamplePool& pool, double t,
                            const Eigen::VectorXd& theta, double ess_floor) {
  PoolPosterior engine(std::make_shared<SamplePool>(pool), ess_floor);
  return engine.moments(t, theta);
}

// ------------------------------------------------------------- product ----

ProductPosterior::ProductPosterior(Factor1D factor, std::size_t dim, int panels)
    : factor_(std::move(factor)), dim_(dim), panels_(panels) {
  if (dim == 0) {
    throw LabError(ErrorKind::kInvalidDimension, "dimension must be positive");
  }
}

ProductPosterior::ProductPosterior(const MeasureModel& model, int panels)
    : dim_(model.dim), panels_(panels) {
  if (!model.factor) {
    throw LabError(ErrorKind::kPreconditionViolation,
                   "product backend needs a product measure");
  }
  factor_ = *model.factor;
}

TiltState ProductPosterior::moments(double t,
                                    const Eigen::VectorXd& theta) const {
  if (static_cast<std::size_t>(theta.size()) != dim_) {
    throw LabError(ErrorKind::kInvalidDimension, "theta has wrong dimension");
  }
  TiltState st;
  st.t = t;
  st.theta = theta;
  st.barycenter.resize(dim_);
  st.covariance = Eigen::MatrixXd::Zero(dim_, dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    const TiltedMoments1D m =
        TiltedQuadrature(factor_, t, theta[i], panels_).moments();
    st.barycenter[i] = m.mean;
    st.covariance(i, i) = m.var;
  }
  return st;
}

Eigen::VectorXd ProductPosterior::mean(double t,
                                       const Eigen::VectorXd& theta) const {
  Eigen::VectorXd a(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    a[i] = TiltedQuadrature(factor_, t, theta[i], panels_).mean();
  }
  return a;
}

ThirdMomentTensor ProductPosterior::third_in_basis(
    double t, const Eigen::VectorXd& theta, const Eigen::MatrixXd& basis) const {
  const std::size_t n = dim_;
  require_tensor_dim(n);
  Eigen::VectorXd diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    diag[i] = TiltedQuadrature(factor_, t, theta[i], panels_).moments().third;
  }
  // Coordinates are independent, so the raw tensor is diagonal and
  // u_ijk = sum_a diag_a E_ai E_aj E_ak.
  ThirdMomentTensor out;
  out.n = n;
  out.t = t;
  out.entries.assign(n * n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      for (std::size_t k = j; k < n; ++k) {
        double s = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          s += diag[a] * basis(a, i) * basis(a, j) * basis(a, k);
        }
        out.entries[(i * n + j) * n + k] = s;
      }
  symmetrize(out.entries, n);
  return out;
}

Eigensystem sorted_eigensystem(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigensystem out{es.eigenvalues(), es.eigenvectors()};
  for (Eigen::Index c = 0; c < out.vectors.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.vectors.rows(); ++r) {
      const double v = out.vectors(r, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0) out.vectors.col(c) *= -1.0;
        break;
      }
    }
  }
  return out;
}

ThirdMomentTensor third_moment(const PosteriorEngine& engine, double t,
                               const Eigen::VectorXd& theta) {
  require_tensor_dim(engine.dim());
  const TiltState st = engine.moments(t, theta);
  return engine.third_in_basis(t, theta,
                               sorted_eigensystem(st.covariance).vectors);
}

ThirdMomentTensor third_moment(const SamplePool& pool, double t,
                               const Eigen::VectorXd& theta, double ess_floor) {
  require_tensor_dim(pool.dim);
  PoolPosterior engine(std::make_shared<SamplePool>(pool), ess_floor);
  return third_moment(engine, t, theta);
}

// ------------------------------------------------------------- drivers ----

const char* to_string(Driver d) {
  return d == Driver::kTiltExact ? "tilt-exact" : "euler-maruyama";
}

namespace {

void record(LocalizationPath& path, const PosteriorEngine& engine,
            TiltState st, bool tensors) {
  const Eigensystem es = sorted_eigensystem(st.covariance);
  std::vector<double> lam(es.values.data(), es.values.data() + es.values.size());
  if (tensors) {
    path.tensors.push_back(engine.third_in_basis(st.t, st.theta, es.vectors));
  }
  path.times.push_back(st.t);
  path.eigenvalues.push_back(std::move(lam));
  path.states.push_back(std::move(st));
}

}  // namespace

LocalizationPath drive_tilt_exact(const MeasureModel& model,
                                  const PosteriorEngine& engine,
                                  const std::vector<double>& times,
                                  std::uint64_t seed, PathOptions options) {
  if (times.empty() || times.front() != 0.0) {
    throw LabError(ErrorKind::kPreconditionViolation,
                   "time grid must start at 0");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     "time grid must be increasing");
    }
  }
  const std::size_t n = model.dim;
  LocalizationPath path;
  path.driver = Driver::kTiltExact;
  path.seed = seed;
  Philox rng(seed);
  std::vector<double> x(n);
  model.sampler(rng, x);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  double prev = 0.0;
  for (double t : times) {
    const double step = std::sqrt(t - prev);
    for (std::size_t k = 0; k < n; ++k) b[k] += step * rng.normal();
    prev = t;
    Eigen::VectorXd theta(n);
    for (std::size_t k = 0; k < n; ++k) theta[k] = t * x[k] + b[k];
    record(path, engine, engine.moments(t, theta), options.third_moments);
  }
  return path;
}

LocalizationPath drive_sde(const MeasureModel& model,
                           const PosteriorEngine& engine, double dt,
                           double t_end, std::uint64_t seed,
                           PathOptions options) {
  if (!(dt > 0.0) || !(dt <= t_end * (1.0 + 1e-12))) {
    throw LabError(ErrorKind::kConfig, "need 0 < dt <= t_end");
  }
  const std::size_t n = model.dim;
  const auto steps =
      static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
  const std::size_t stride = std::max<std::size_t>(1, options.record_stride);
  LocalizationPath path;
  path.driver = Driver::kEulerMaruyama;
  path.seed = seed;
  Philox rng(seed);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  record(path, engine, engine.moments(0.0, theta), options.third_moments);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = k * dt;
    const double h = (k + 1 == steps) ? t_end - t : dt;
    const Eigen::VectorXd a = engine.mean(t, theta);
    const double sq = std::sqrt(h);
    for (std::size_t i = 0; i < n; ++i) theta[i] += a[i] * h + sq * rng.normal();
    if (!theta.allFinite()) {
      throw LabError(ErrorKind::kDivergence, "non-finite theta",
                     static_cast<double>(k + 1));
    }
    if ((k + 1) % stride == 0 || k + 1 == steps) {
      const double tn = (k + 1 == steps) ? t_end : (k + 1) * dt;
      record(path, engine, engine.moments(tn, theta), options.third_moments);
    }
  }
  return path;
}

std::vector<LocalizationPath> simulate_ensemble(const MeasureModel& model,
                                                const PosteriorEngine& engine,
                                                const EnsembleSpec& spec) {
  std::vector<LocalizationPath> paths(spec.paths);
  parallel_for(spec.paths, [&](std::size_t p) {
    const std::uint64_t seed = stream_key(spec.base_seed, p);
    paths[p] = spec.driver == Driver::kTiltExact
                   ? drive_tilt_exact(model, engine, spec.times, seed,
                                      spec.options)
                   : drive_sde(model, engine, spec.dt, spec.t_end, seed,
                               spec.options);
  });
  return paths;
}

// ---------------------------------------------------------- statistics ----

namespace {

void require_common_grid(const std::vector<LocalizationPath>& paths) {
  if (paths.empty()) {
    throw LabError(ErrorKind::kEmptyEnsemble, "no paths");
  }
  const auto& ref = paths.front().times;
  for (const auto& p : paths) {
    if (p.times.size() != ref.size()) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     "paths do not share a time grid");
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (std::abs(p.times[i] - ref[i]) > 1e-12 * (1.0 + ref[i])) {
        throw LabError(ErrorKind::kPreconditionViolation,
                       "paths do not share a time grid");
      }
    }
  }
}

double tr_sq(const Eigen::MatrixXd& a) { return (a * a).trace(); }

ComparisonRow compare(std::string label, double t, double lhs, double rhs,
                      double se, double tol) {
  ComparisonRow r;
  r.label = std::move(label);
  r.t = t;
  r.lhs = lhs;
  r.rhs = rhs;
  r.se = se;
  r.tolerance = tol;
  r.pass = std::abs(lhs - rhs) <= tol;
  return r;
}

}  // namespace

EnsembleStats ensemble_stats(const std::vector<LocalizationPath>& paths,
                             const std::vector<SpectralHook>& hooks, int bins,
                             double bin_max) {
  require_common_grid(paths);
  EnsembleStats out;
  for (int b = 0; b <= bins; ++b) out.bin_edges.push_back(bin_max * b / bins);
  const std::size_t np = paths.size();
  std::vector<double> a2(np), tra(np), tra2(np), cons(np), hv(np);
  for (std::size_t i = 0; i < paths.front().times.size(); ++i) {
    TimeStats ts;
    ts.t = paths.front().times[i];
    ts.histogram.assign(bins + 1, 0);  // last bin collects overflow
    for (std::size_t p = 0; p < np; ++p) {
      const TiltState& st = paths[p].states[i];
      a2[p] = st.barycenter.squaredNorm();
      tra[p] = st.covariance.trace();
      tra2[p] = tr_sq(st.covariance);
      cons[p] = tra[p] + a2[p];
      for (double l : paths[p].eigenvalues[i]) {
        int b = static_cast<int>(std::floor(std::max(l, 0.0) / bin_max * bins));
        ts.histogram[std::min(b, bins)]++;
      }
    }
    ts.a_norm_sq = mean_se(a2);
    ts.tr_A = mean_se(tra);
    ts.tr_A_sq = mean_se(tra2);
    ts.conserved = mean_se(cons);
    for (const auto& hook : hooks) {
      for (std::size_t p = 0; p < np; ++p) hv[p] = hook(paths[p].eigenvalues[i]);
      ts.hooks.push_back(mean_se(hv));
    }
    out.per_time.push_back(std::move(ts));
  }
  return out;
}

MartingaleReport martingale_checks(const std::vector<LocalizationPath>& paths,
                                   std::size_t lag, CheckTolerance tol,
                                   double drift_floor) {
  require_common_grid(paths);
  MartingaleReport rep;
  const auto& times = paths.front().times;
  const std::size_t n = paths.front().states.front().barycenter.size();
  const std::size_t np = paths.size();
  std::vector<double> buf(np);

  for (std::size_t i = 0; i < times.size(); ++i) {
    for (std::size_t p = 0; p < np; ++p) {
      const TiltState& st = paths[p].states[i];
      buf[p] = st.covariance.trace() + st.barycenter.squaredNorm();
    }
    const MeanSe m = mean_se(buf);
    const double target = static_cast<double>(n);
    const double allowed = std::max(tol.se_multiple * m.se,
                                    tol.abs_floor + tol.rel_floor * target);
    rep.conservation.push_back(
        compare("E[TrA+|a|^2]", times[i], m.mean, target, m.se, allowed));
  }

  lag = std::max<std::size_t>(1, lag);
  for (std::size_t i = lag; i + lag < times.size(); ++i) {
    const double h = times[i + 1] - times[i];
    bool uniform = true;
    for (std::size_t j = i - lag; j < i + lag; ++j) {
      if (std::abs(times[j + 1] - times[j] - h) > 1e-9 * (1.0 + h)) uniform = false;
    }
    if (!uniform) continue;
    const double width = times[i + lag] - times[i - lag];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = r; c < n; ++c) {
        std::vector<double> fd(np), integral(np);
        for (std::size_t p = 0; p < np; ++p) {
          const auto& st = paths[p].states;
          // Composite Simpson over 2*lag uniform intervals.
          double s = 0.0;
          for (std::size_t j = i - lag; j <= i + lag; ++j) {
            const double wgt = (j == i - lag || j == i + lag) ? 1.0
                               : ((j - (i - lag)) % 2 == 1)   ? 4.0
                                                              : 2.0;
            const Eigen::MatrixXd a2 = st[j].covariance * st[j].covariance;
            s += wgt * a2(r, c);
          }
          integral[p] = -s * h / 3.0 / width;
          fd[p] = (st[i + lag].covariance(r, c) - st[i - lag].covariance(r, c)) /
                  width;
          buf[p] = fd[p] - integral[p];
        }
        const MeanSe diff = mean_se(buf);
        const MeanSe lhs = mean_se(fd);
        const MeanSe rhs = mean_se(integral);
        const double allowed = std::max(tol.se_multiple * diff.se, drift_floor);
        ComparisonRow row = compare(
            "dE[A" + std::to_string(r + 1) + std::to_string(c + 1) + "]/dt",
            times[i], lhs.mean, rhs.mean, diff.se, allowed);
        row.pass = std::abs(diff.mean) <= allowed;
        rep.drift.push_back(row);
      }
    }
  }
  for (const auto& r : rep.conservation) rep.pass = rep.pass && r.pass;
  for (const auto& r : rep.drift) rep.pass = rep.pass && r.pass;
  return rep;
}

DerivativeReport derivative_identity_check(
    const std::vector<LocalizationPath>& paths, double t_lo, double t_hi,
    double rel_tol) {
  require_common_grid(paths);
  DerivativeReport rep;
  const auto& times = paths.front().times;
  const std::size_t np = paths.size();
  std::vector<double> fd(np), tr2(np), diff(np);
  for (std::size_t i = 1; i + 1 < times.size(); ++i) {
    if (times[i] < t_lo - 1e-12 || times[i] > t_hi + 1e-12) continue;
    const double width = times[i + 1] - times[i - 1];
    for (std::size_t p = 0; p < np; ++p) {
      const auto& st = paths[p].states;
      fd[p] = (st[i + 1].barycenter.squaredNorm() -
               st[i - 1].barycenter.squaredNorm()) /
              width;
      tr2[p] = tr_sq(st[i].covariance);
      diff[p] = fd[p] - tr2[p];
    }
    const MeanSe l = mean_se(fd);
    const MeanSe r = mean_se(tr2);
    const MeanSe d = mean_se(diff);
    const double allowed = std::max(rel_tol * std::abs(r.mean), 3.0 * d.se);
    ComparisonRow row =
        compare("dE|a|^2/dt vs E Tr A^2", times[i], l.mean, r.mean, d.se, allowed);
    rep.rows.push_back(row);
    rep.pass = rep.pass && row.pass;
  }
  return rep;
}

ScalarFunction identity_function() {
  return {"identity", [](double x) { return x; }, [](double) { return 1.0; },
          [](double) { return 0.0; }};
}

double eigen_drift(const std::vector<double>& lambdas,
                   const ThirdMomentTensor& u, const ScalarFunction& f,
                   double gap_floor) {
  const std::size_t n = lambdas.size();
  double drift = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    drift -= lambdas[i] * lambdas[i] * f.d1(lambdas[i]);
  }
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double gap = lambdas[i] - lambdas[j];
      const double q = std::abs(gap) < gap_floor
                           ? f.d2(lambdas[i])
                           : (f.d1(lambdas[i]) - f.d1(lambdas[j])) / gap;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = u.at(i, j, k);
        m += v * v * q;
      }
    }
  }
  return drift + 0.5 * m;
}

DriftReport eigen_drift_check(const std::vector<LocalizationPath>& paths,
                              const ScalarFunction& f, double gap_floor,
                              double rel_tol) {
  require_common_grid(paths);
  DriftReport rep;
  const auto& times = paths.front().times;
  const std::size_t np = paths.size();
  for (const auto& p : paths) {
    if (p.tensors.size() != p.times.size()) {
      throw LabError(ErrorKind::kPreconditionViolation,
                     "eigen drift check needs third-moment tensors");
    }
  }
  auto F = [&](const std::vector<double>& lam) {
    double s = 0.0;
    for (double l : lam) s += f.f(std::max(l, 0.0));
    return s;
  };
  std::vector<double> fd(np), drift(np), diff(np);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const double width = times[i + 1] - times[lo];
    bool crossing = false;
    for (std::size_t p = 0; p < np; ++p) {
      const auto& lam = paths[p].eigenvalues[i];
      for (std::size_t a = 1; a < lam.size(); ++a) {
        if (lam[a] - lam[a - 1] < gap_floor) crossing = true;
      }
      fd[p] = (F(paths[p].eigenvalues[i + 1]) - F(paths[p].eigenvalues[lo])) /
              width;
      drift[p] = eigen_drift(lam, paths[p].tensors[i], f, gap_floor);
      diff[p] = fd[p] - drift[p];
    }
    if (crossing) rep.near_crossing_times.push_back(times[i]);
    const MeanSe l = mean_se(fd);
    const MeanSe r = mean_se(drift);
    const MeanSe d = mean_se(diff);
    const double allowed = std::max(rel_tol * std::abs(r.mean), 3.0 * d.se);
    ComparisonRow row = compare("dE F/dt vs drift(" + f.name + ")", times[i],
                                l.mean, r.mean, d.se, allowed);
    rep.rows.push_back(row);
    rep.pass = rep.pass && row.pass;
  }
  return rep;
}

MomentBoundReport moment_bound_check(const std::vector<LocalizationPath>& paths,
                                     double r, double se_multiple,
                                     double rel_slack) {
  MomentBoundReport rep;
  for (const auto& path : paths) {
    for (std::size_t i = 0; i < path.tensors.size(); ++i) {
      const double t = path.times[i];
      if (t <= 0.0) continue;
      const auto& lam = path.eigenvalues[i];
      const auto& u = path.tensors[i];
      const std::size_t n = lam.size();
      for (std::size_t k = 0; k < n; ++k) {
        double lhs = 0.0;
        double var = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
          if (lam[a] > r) continue;
          for (std::size_t b = 0; b < n; ++b) {
            if (lam[b] > r) continue;
            const double v = u.at(a, b, k);
            lhs += v * v;
            if (!u.se.empty()) {
              const double s = u.se[(a * n + b) * n + k];
              var += 4.0 * v * v * s * s;
            }
          }
        }
        const double bound =
            4.0 / std::sqrt(t) * std::pow(r, 1.5) * std::max(lam[k], 0.0);
        ++rep.checked;
        if (bound > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, lhs / bound);
        if (lhs > bound * (1.0 + rel_slack) + se_multiple * std::sqrt(var)) {
          ++rep.violations;
        }
      }
    }
  }
  rep.pass = rep.violations == 0;
  return rep;
}

LichnerowiczReport lichnerowicz_cap_check(
    const std::vector<LocalizationPath>& paths, double se_multiple,
    double rel_slack) {
  LichnerowiczReport rep;
  for (const auto& path : paths) {
    for (std::size_t i = 0; i < path.states.size(); ++i) {
      const double t = path.times[i];
      if (t <= 0.0) continue;
      const double top = path.eigenvalues[i].back();
      const double se = path.states[i].lambda_max_se.value_or(0.0);
      ++rep.checked;
      rep.worst_excess = std::max(rep.worst_excess, t * top - 1.0);
      if (top > (1.0 + rel_slack) / t + se_multiple * se) ++rep.violations;
    }
  }
  rep.pass = rep.violations == 0;
  return rep;
}

std::vector<TailRow> opnorm_tail(const std::vector<LocalizationPath>& paths,
                                 double C2) {
  require_common_grid(paths);
  std::vector<TailRow> out;
  const double z = 1.959963984540054;
  const double np = static_cast<double>(paths.size());
  for (std::size_t i = 0; i < paths.front().times.size(); ++i) {
    std::size_t hits = 0;
    for (const auto& p : paths) {
      if (p.eigenvalues[i].back() >= 2.0) ++hits;
    }
    TailRow row;
    row.t = paths.front().times[i];
    row.frequency = hits / np;
    const double ph = row.frequency;
    const double denom = 1.0 + z * z / np;
    const double centre = (ph + z * z / (2.0 * np)) / denom;
    const double half =
        z * std::sqrt(ph * (1.0 - ph) / np + z * z / (4.0 * np * np)) / denom;
    row.wilson_lo = std::max(0.0, centre - half);
    row.wilson_hi = std::min(1.0, centre + half);
    row.bound = row.t > 0.0 ? std::exp(-1.0 / (C2 * row.t)) : 0.0;
    out.push_back(row);
  }
  return out;
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b,
                       double c_alpha) {
  if (a.empty() || b.empty()) {
    throw LabError(ErrorKind::kEmptyEnsemble, "KS test needs two samples");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(i / na - j / nb));
  }
  KsResult r;
  r.statistic = d;
  r.critical = c_alpha * std::sqrt((na + nb) / (na * nb));
  r.pass = d < r.critical;
  return r;
}

void write_paths_csv(const std::vector<LocalizationPath>& paths,
                     const std::string& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw LabError(ErrorKind::kIo, "cannot write " + file);
  const std::size_t n =
      paths.empty() ? 0 : paths.front().states.front().barycenter.size();
  os << "time,path_id,a_norm_sq,tr_A,tr_A_sq";
  for (std::size_t k = 1; k <= n; ++k) os << ",lambda_" << k;
  os << '\n';
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto& path = paths[p];
    for (std::size_t i = 0; i < path.times.size(); ++i) {
      const auto& st = path.states[i];
      os << format_double(path.times[i]) << ',' << p << ','
         << format_double(st.barycenter.squaredNorm()) << ','
         << format_double(st.covariance.trace()) << ','
         << format_double(tr_sq(st.covariance));
      for (double l : path.eigenvalues[i]) os << ',' << format_double(l);
      os << '\n';
    }
  }
}

}  // namespace sllab

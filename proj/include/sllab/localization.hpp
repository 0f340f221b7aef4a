#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sllab/measures.hpp"
#include "sllab/numerics.hpp"

namespace sllab {

struct TiltState {
  double t = 0.0;
  Eigen::VectorXd theta;
  Eigen::VectorXd barycenter;
  Eigen::MatrixXd covariance;
  std::optional<double> ess;            // pool backend only
  std::optional<double> lambda_max_se;  // pool backend only
};

struct ThirdMomentTensor {
  std::size_t n = 0;
  double t = 0.0;
  std::vector<double> entries;  // n*n*n, row-major
  std::vector<double> se;       // per-entry standard error; empty if exact

  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return entries[(i * n + j) * n + k];
  }
};

/// Source of posterior moments of p_{t,theta}.
class PosteriorEngine {
 public:
  virtual ~PosteriorEngine() = default;
  virtual std::size_t dim() const = 0;
  virtual TiltState moments(double t, const Eigen::VectorXd& theta) const = 0;
  virtual Eigen::VectorXd mean(double t, const Eigen::VectorXd& theta) const;
  // Central third moments expressed in the orthonormal columns of `basis`.
  virtual ThirdMomentTensor third_in_basis(double t, const Eigen::VectorXd& theta,
                                           const Eigen::MatrixXd& basis) const = 0;
  // True when moments carry no Monte-Carlo error of their own.
  virtual bool exact() const = 0;
  virtual std::string name() const = 0;
};

/// Self-normalized reweighting of a fixed prior pool.
class PoolPosterior : public PosteriorEngine {
 public:
  explicit PoolPosterior(std::shared_ptr<const SamplePool> pool,
                         double ess_floor = 50.0);
  std::size_t dim() const override { return pool_->dim; }
  TiltState moments(double t, const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd mean(double t, const Eigen::VectorXd& theta) const override;
  ThirdMomentTensor third_in_basis(double t, const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& basis) const override;
  bool exact() const override { return false; }
  std::string name() const override { return "pool"; }

  const SamplePool& pool() const { return *pool_; }

 private:
  // Normalized weights; throws degenerate-tilt below the ESS floor.
  std::vector<double> weights(double t, const Eigen::VectorXd& theta,
                              double* ess) const;

  std::shared_ptr<const SamplePool> pool_;
  std::vector<double> norm_sq_;
  double ess_floor_;
};

/// Exact tilted moments of a product measure: the tilt factorizes, so each
/// coordinate is a 1D quadrature.
class ProductPosterior : public PosteriorEngine {
 public:
  ProductPosterior(Factor1D factor, std::size_t dim, int panels = 12);
  explicit ProductPosterior(const MeasureModel& model, int panels = 12);
  std::size_t dim() const override { return dim_; }
  TiltState moments(double t, const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd mean(double t, const Eigen::VectorXd& theta) const override;
  ThirdMomentTensor third_in_basis(double t, const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& basis) const override;
  bool exact() const override { return true; }
  std::string name() const override { return "product"; }

 private:
  Factor1D factor_;
  std::size_t dim_;
  int panels_;
};

TiltState posterior_moments(const SamplePool& pool, double t,
                            const Eigen::VectorXd& theta,
                            double ess_floor = 50.0);

struct Eigensystem {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns; first nonzero component positive
};
Eigensystem sorted_eigensystem(const Eigen::MatrixXd& a);

// Third moments rotated into the eigenbasis of A(t, theta).
ThirdMomentTensor third_moment(const PosteriorEngine& engine, double t,
                               const Eigen::VectorXd& theta);
ThirdMomentTensor third_moment(const SamplePool& pool, double t,
                               const Eigen::VectorXd& theta,
                               double ess_floor = 50.0);

enum class Driver { kTiltExact, kEulerMaruyama };
const char* to_string(Driver d);

struct LocalizationPath {
  std::vector<double> times;
  std::vector<TiltState> states;
  std::vector<std::vector<double>> eigenvalues;
  std::vector<ThirdMomentTensor> tensors;  // filled when requested
  Driver driver = Driver::kTiltExact;
  std::uint64_t seed = 0;
};

struct PathOptions {
  bool third_moments = false;
  // Euler-Maruyama records every record_stride-th step (and the last).
  std::size_t record_stride = 1;
};

LocalizationPath drive_tilt_exact(const MeasureModel& model,
                                  const PosteriorEngine& engine,
                                  const std::vector<double>& times,
                                  std::uint64_t seed, PathOptions options = {});
LocalizationPath drive_sde(const MeasureModel& model,
                           const PosteriorEngine& engine, double dt,
                           double t_end, std::uint64_t seed,
                           PathOptions options = {});

struct EnsembleSpec {
  Driver driver = Driver::kTiltExact;
  std::vector<double> times;  // tilt-exact grid
  double dt = 1e-3;           // Euler-Maruyama step
  double t_end = 1.0;
  std::size_t paths = 1000;
  std::uint64_t base_seed = 1;
  PathOptions options;
};

// Path p uses seed stream_key(base_seed, p).
std::vector<LocalizationPath> simulate_ensemble(const MeasureModel& model,
                                                const PosteriorEngine& engine,
                                                const EnsembleSpec& spec);

using SpectralHook = std::function<double(const std::vector<double>&)>;

struct TimeStats {
  double t = 0.0;
  MeanSe a_norm_sq;
  MeanSe tr_A;
  MeanSe tr_A_sq;
  MeanSe conserved;  // Tr A + |a|^2
  std::vector<MeanSe> hooks;
  std::vector<std::size_t> histogram;  // eigenvalue counts per bin
};

struct EnsembleStats {
  std::vector<TimeStats> per_time;
  std::vector<double> bin_edges;
};

EnsembleStats ensemble_stats(const std::vector<LocalizationPath>& paths,
                             const std::vector<SpectralHook>& hooks = {},
                             int bins = 30, double bin_max = 3.0);

// A scalar function with two derivatives, e.g. an assistant function.
struct ScalarFunction {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};
ScalarFunction identity_function();

struct CheckTolerance {
  double se_multiple = 3.0;
  double abs_floor = 1e-10;  // deterministic numerical error floor
  double rel_floor = 0.0;
};

struct ComparisonRow {
  std::string label;
  double t = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double se = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct MartingaleReport {
  std::vector<ComparisonRow> conservation;  // E[Tr A + |a|^2] vs n
  std::vector<ComparisonRow> drift;         // d/dt E A vs -E A^2, entrywise
  bool pass = true;
};

// The drift check uses the grid points at distance `lag` steps on either side
// and integrates E A_s^2 between them by Simpson's rule on the recorded grid.
// drift_floor absorbs the Simpson error: a few 1e-6 at spacing 0.05 for A of
// unit scale, but about 4e-5 at spacing 0.1.
MartingaleReport martingale_checks(const std::vector<LocalizationPath>& paths,
                                   std::size_t lag = 1,
                                   CheckTolerance tol = {3.0, 1e-10, 0.0},
                                   double drift_floor = 1e-5);

struct DerivativeReport {
  std::vector<ComparisonRow> rows;  // centred FD of E|a|^2 vs E Tr A^2
  bool pass = true;
};
DerivativeReport derivative_identity_check(
    const std::vector<LocalizationPath>& paths, double t_lo, double t_hi,
    double rel_tol = 0.05);

struct DriftReport {
  std::vector<ComparisonRow> rows;
  std::vector<double> near_crossing_times;  // gaps below gap_floor
  bool pass = true;
};
DriftReport eigen_drift_check(const std::vector<LocalizationPath>& paths,
                              const ScalarFunction& f, double gap_floor = 1e-4,
                              double rel_tol = 0.10);

// Drift of F_t = sum f(lambda_i) from one state's eigenvalues and tensor.
double eigen_drift(const std::vector<double>& lambdas,
                   const ThirdMomentTensor& u, const ScalarFunction& f,
                   double gap_floor = 1e-4);

struct MomentBoundReport {
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;  // max lhs / bound
  bool pass = true;
};
// Violation: lhs exceeds the bound by more than se_multiple standard errors
// of lhs (zero for exact backends) plus a relative rounding slack.
MomentBoundReport moment_bound_check(const std::vector<LocalizationPath>& paths,
                                     double r, double se_multiple = 3.0,
                                     double rel_slack = 1e-9);

struct LichnerowiczReport {
  std::size_t checked = 0;
  std::size_t violations = 0;
  double worst_excess = -INFINITY;  // max of t*lambda_max - 1
  bool pass = true;
};
// Violation: lambda_max > 1/t + se_multiple * SE(lambda_max) + rel_slack/t.
LichnerowiczReport lichnerowicz_cap_check(
    const std::vector<LocalizationPath>& paths, double se_multiple = 5.0,
    double rel_slack = 1e-9);

struct TailRow {
  double t = 0.0;
  double frequency = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 0.0;
  double bound = 0.0;  // exp(-1/(C2 t)), reported only
};
std::vector<TailRow> opnorm_tail(const std::vector<LocalizationPath>& paths,
                                 double C2 = 1.0);

// Two-sample Kolmogorov-Smirnov statistic and 1% critical value.
struct KsResult {
  double statistic = 0.0;
  double critical = 0.0;
  bool pass = false;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b,
                       double c_alpha = 1.628);

void write_paths_csv(const std::vector<LocalizationPath>& paths,
                     const std::string& file);

}  // namespace sllab

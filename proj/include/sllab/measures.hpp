#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sllab/rng.hpp"

namespace sllab {

/// One coordinate of a product measure. Log-density derivatives are only
/// meaningful inside [lo, hi].
struct Factor1D {
  std::string name;
  double lo = -INFINITY;
  double hi = INFINITY;
  double log_normalizer = 0.0;
  std::function<double(double)> log_density;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
  std::function<double(Philox&)> sample;
  // Interval carrying all but ~1e-16 of the mass; used for base quadrature.
  double window_lo = 0.0;
  double window_hi = 0.0;
  // Truncation used when discretizing the generator.
  double spectral_lo = 0.0;
  double spectral_hi = 0.0;
  bool smooth = false;  // C-infinity positive density on the real line
};

struct ClosedFormOracle {
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> posterior_mean;
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> posterior_cov;
  std::optional<double> var_norm_sq;
  std::optional<double> spectral_gap;
};

struct MeasureModel {
  std::string key;
  std::size_t dim = 0;
  std::function<double(std::span<const double>)> log_density;
  std::function<void(std::span<const double>, std::span<double>)> grad_log_density;
  // Empty when the density has no Hessian (compact support, kinks).
  std::function<Eigen::MatrixXd(std::span<const double>)> hessian_log_density;
  std::function<void(Philox&, std::span<double>)> sampler;
  std::optional<ClosedFormOracle> oracle;
  // Present when the measure is the n-fold product of one 1D factor.
  std::optional<Factor1D> factor;
  double log_normalizer = 0.0;

  std::vector<double> sample(std::uint64_t seed) const;
};

Factor1D gaussian_factor();
Factor1D exponential_factor();
Factor1D cube_factor();

// Product measure built from identical factors.
MeasureModel make_product(const Factor1D& factor, std::size_t dim,
                          std::string key);

MeasureModel make_gaussian(std::size_t dim);
MeasureModel make_product_exponential(std::size_t dim);
MeasureModel make_uniform_cube(std::size_t dim);

using MeasureFactory = std::function<MeasureModel(std::size_t)>;
void register_measure(const std::string& key, MeasureFactory factory);
MeasureModel make_measure(const std::string& key, std::size_t dim);
std::vector<std::string> measure_keys();

struct SamplePool {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::vector<double> points;  // row-major, count x dim

  std::span<const double> point(std::size_t i) const {
    return {points.data() + i * dim, dim};
  }
};

// Point i is drawn from the stream keyed by (seed, i).
SamplePool draw_pool(const MeasureModel& model, std::size_t count,
                     std::uint64_t seed);

void save_pool(const SamplePool& pool, const std::string& path);
SamplePool load_pool(const std::string& path);

}  // namespace sllab

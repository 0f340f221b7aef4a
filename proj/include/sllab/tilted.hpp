#pragma once

#include <functional>
#include <vector>

#include "sllab/measures.hpp"

namespace sllab {

struct TiltedMoments1D {
  double log_z = 0.0;  // log of the unnormalized tilted mass (factor normalizer excluded)
  double mean = 0.0;
  double var = 0.0;
  double third = 0.0;  // central third moment
};

/// Quadrature for the 1D density proportional to
///   exp(log_density(x) + theta*x - t*x^2/2)
/// on the factor's support. The window is centred at the mode and extended
/// until the exponent has dropped by `drop` on each side.
class TiltedQuadrature {
 public:
  TiltedQuadrature(const Factor1D& factor, double t, double theta,
                   int panels = 12, double drop = 46.0);

  const std::vector<double>& nodes() const { return nodes_; }
  // Probability weights, summing to one.
  const std::vector<double>& weights() const { return weights_; }
  double mode() const { return mode_; }
  double log_z() const { return log_z_; }

  TiltedMoments1D moments() const;
  double mean() const;
  double expect(const std::function<double(double)>& u) const;

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
  double mode_ = 0.0;
  double log_z_ = 0.0;
};

}  // namespace sllab

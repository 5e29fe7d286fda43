#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "alqr/common.hpp"

namespace alqr {

struct DensityOptions {
  double bandwidth = 0.0;      // 0 means Silverman's rule
  double floor_factor = 1e-3;  // floor = floor_factor / scale_anchor; 0 disables
  double scale_anchor = 0.0;   // typically IQR of the outcome
};

struct DensityEstimate {
  double value_at_zero = 0.0;
  double bandwidth = 0.0;
  bool floored = false;
};

//! Gaussian kernel density of the residuals evaluated at zero, i.e. an
//! estimate of the conditional outcome density at the fitted quantile under
//! a homoscedastic residual model. Bandwidth: Silverman's rule
//! h = 0.9 min(sd, IQR/1.34) n^(-1/5) on the (weighted) residual spread.
//! The value is floored at floor_factor / scale_anchor so downstream
//! divisions stay bounded.
inline DensityEstimate residual_density_at_quantile(const std::vector<double>& residuals,
                                                    const std::vector<double>& weights,
                                                    const DensityOptions& opts = {}) {
  const std::size_t n = residuals.size();
  if (n == 0) fail_data("LengthMismatch", "no residuals");
  if (!weights.empty() && weights.size() != n)
    fail_data("LengthMismatch", "weight length != residual length");

  DensityEstimate est;
  if (opts.bandwidth > 0.0) {
    est.bandwidth = opts.bandwidth;
  } else {
    double sd = std::sqrt(weighted_variance(residuals, weights));
    double iqr = weighted_iqr(residuals, weights);
    double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    est.bandwidth = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    if (!(est.bandwidth > 0.0))
      fail_numeric("DegenerateResiduals", "residual spread is zero, bandwidth collapsed");
  }

  double num = 0.0, den = 0.0;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    double wi = weights.empty() ? 1.0 : weights[i];
    double u = residuals[i] / est.bandwidth;
    num += wi * inv_sqrt2pi * std::exp(-0.5 * u * u);
    den += wi;
  }
  est.value_at_zero = num / (den * est.bandwidth);

  if (opts.floor_factor > 0.0 && opts.scale_anchor > 0.0) {
    double floor = opts.floor_factor / opts.scale_anchor;
    if (est.value_at_zero < floor) {
      est.value_at_zero = floor;
      est.floored = true;
    }
  }
  return est;
}

}  // namespace alqr

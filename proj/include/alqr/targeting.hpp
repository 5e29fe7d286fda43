#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/core.hpp"
#include "alqr/density.hpp"
#include "alqr/estimand.hpp"
#include "alqr/nuisance.hpp"

namespace alqr {

//! Direction of the targeting perturbation for one observation.
inline double clever_covariate(double a, double m, double d) { return (a - m) / d; }

//! Weighted average of w * (tau - I{y <= q}); the quantity targeting drives
//! to zero. Indicators include equality.
inline double targeting_sum(const std::vector<double>& y, const std::vector<double>& q,
                            const std::vector<double>& w, double tau,
                            const std::vector<double>& weights = {}) {
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double omega = weights.empty() ? 1.0 : weights[i];
    acc += omega * w[i] * (tau - leq(y[i], q[i]));
    wsum += omega;
  }
  return acc / wsum;
}

//! Exact minimizer of |S(eps)| for the step q + eps * w. S is piecewise
//! constant with breakpoints (y - q)/w, so evaluating every breakpoint, every
//! midpoint between neighbors, outer sentinels, and zero covers all attainable
//! values. Ties prefer the smallest |eps|, then the smallest eps.
inline double solve_epsilon(const std::vector<double>& y, const std::vector<double>& q,
                            const std::vector<double>& w, double tau,
                            const std::vector<double>& weights = {}) {
  const std::size_t n = y.size();
  std::vector<double> breaks;
  breaks.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (w[i] != 0.0) breaks.push_back((y[i] - q[i]) / w[i]);
  if (breaks.empty())
    fail_numeric("AllZeroCleverCovariates", "targeting step has no direction");
  std::sort(breaks.begin(), breaks.end());

  std::vector<double> candidates;
  candidates.reserve(2 * breaks.size() + 3);
  candidates.push_back(0.0);
  candidates.push_back(breaks.front() - (1.0 + std::abs(breaks.front())));
  candidates.push_back(breaks.back() + (1.0 + std::abs(breaks.back())));
  for (std::size_t b = 0; b < breaks.size(); ++b) {
    candidates.push_back(breaks[b]);
    if (b + 1 < breaks.size() && breaks[b] < breaks[b + 1])
      candidates.push_back(breaks[b] + 0.5 * (breaks[b + 1] - breaks[b]));
  }

  double best_eps = 0.0;
  double best_abs = std::numeric_limits<double>::infinity();
  std::vector<double> shifted(n);
  for (double eps : candidates) {
    for (std::size_t i = 0; i < n; ++i) shifted[i] = q[i] + eps * w[i];
    double s = std::abs(targeting_sum(y, shifted, w, tau, weights));
    bool better = s < best_abs ||
                  (s == best_abs && (std::abs(eps) < std::abs(best_eps) ||
                                     (std::abs(eps) == std::abs(best_eps) && eps < best_eps)));
    if (better) {
      best_abs = s;
      best_eps = eps;
    }
  }
  return best_eps;
}

namespace detail {

inline double mean_abs(const std::vector<double>& v, const Dataset& ds) {
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += ds.weight(i) * std::abs(v[i]);
    wsum += ds.weight(i);
  }
  return acc / wsum;
}

}  // namespace detail

//! Iterative targeting for a binary exposure. Each iteration re-estimates the
//! residual density at the current quantiles, takes the exact best epsilon
//! step, and stops once |S| no longer strictly decreases, falls below the
//! tolerance, or the iteration cap is hit. The counterfactual quantiles are
//! shifted with their own exposure-specific clever covariates, which keeps
//! the decomposition mean v unchanged across iterations.
inline EstimatorOutput tmle_binary(const Dataset& ds, const NuisanceFits& nu,
                                   const EstimatorConfig& cfg) {
  const std::size_t n = ds.n();
  if (nu.q1.empty() || nu.q0.empty())
    fail_config("InvalidConfig", "binary targeting requires counterfactual quantiles");

  std::vector<double> qt = nu.q, q1 = nu.q1, q0 = nu.q0;
  std::vector<double> w(n), cur_d = nu.d;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = clever_covariate(ds.a[i], nu.m[i], nu.d[i]);

  const double tol = cfg.tmle_tol_factor * detail::mean_abs(w, ds);
  double s_cur = targeting_sum(ds.y, qt, w, nu.tau, ds.w);

  Diagnostics diag;
  diag.s_trace.push_back(std::abs(s_cur));
  const double y_anchor = weighted_iqr(ds.y, ds.w);

  std::vector<double> resid(n), trial(n);
  while (std::abs(s_cur) > tol && diag.n_iterations < cfg.tmle_max_iter) {
    double d_scalar = 0.0;
    if (diag.n_iterations == 0 && cfg.tmle_mode == TmleMode::onestep) {
      // One-step mode keeps the cross-fitted densities of the initial fit.
    } else {
      for (std::size_t i = 0; i < n; ++i) resid[i] = ds.y[i] - qt[i];
      DensityOptions dopt;
      dopt.bandwidth = cfg.learners.density_bandwidth;
      dopt.floor_factor = cfg.learners.density_floor_factor;
      dopt.scale_anchor = y_anchor;
      d_scalar = residual_density_at_quantile(resid, ds.w, dopt).value_at_zero;
      for (std::size_t i = 0; i < n; ++i) w[i] = (ds.a[i] - nu.m[i]) / d_scalar;
    }

    double eps = solve_epsilon(ds.y, qt, w, nu.tau, ds.w);
    for (std::size_t i = 0; i < n; ++i) trial[i] = qt[i] + eps * w[i];
    double s_new = targeting_sum(ds.y, trial, w, nu.tau, ds.w);
    if (!(std::abs(s_new) < std::abs(s_cur))) break;

    qt.swap(trial);
    if (d_scalar > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        q1[i] += eps * (1.0 - nu.m[i]) / d_scalar;
        q0[i] += eps * (0.0 - nu.m[i]) / d_scalar;
        cur_d[i] = d_scalar;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        q1[i] += eps * (1.0 - nu.m[i]) / nu.d[i];
        q0[i] += eps * (0.0 - nu.m[i]) / nu.d[i];
      }
    }
    s_cur = s_new;
    diag.n_iterations += 1;
    diag.epsilon_trace.push_back(eps);
    diag.s_trace.push_back(std::abs(s_new));
    if (cfg.tmle_mode == TmleMode::onestep) break;
  }

  diag.targeting_residual = s_cur;
  diag.targeting_converged = std::abs(s_cur) <= tol;

  // Decomposition mean of the targeted quantiles; invariant across updates.
  std::vector<double> vt(n);
  for (std::size_t i = 0; i < n; ++i) vt[i] = q1[i] * nu.m[i] + q0[i] * (1.0 - nu.m[i]);

  double denom = exposure_denominator(ds, nu.m);
  std::vector<double> extra(n);
  for (std::size_t i = 0; i < n; ++i)
    extra[i] = (nu.tau - leq(ds.y[i], qt[i])) / cur_d[i];
  EstimatorOutput out = detail::if_based_output(ds, nu.m, qt, vt, extra, denom, nu.tau,
                                                LinkKind::identity, EstimatorKind::tmle);
  out.diagnostics = diag;
  return out;
}

//! One-step targeting: a single exact epsilon step on the realized quantiles,
//! with the conditional mean shifted through the fitted conditional mean of
//! the clever covariate. The step itself uses the cross-fitted initial
//! densities; once the quantiles have moved, the indicator term of the final
//! expression evaluates the density at the targeted fit, re-estimated from
//! the pooled updated residuals. Serves both continuous exposures and the
//! variable-selection estimator (where the parametric fit supplies the
//! initial quantiles).
inline EstimatorOutput tmle_onestep(const Dataset& ds, const NuisanceFits& nu,
                                    const EstimatorConfig& cfg,
                                    EstimatorKind label = EstimatorKind::tmle) {
  const std::size_t n = ds.n();
  if (nu.h.empty())
    fail_config("InvalidConfig", "one-step targeting requires the clever-covariate mean fit");

  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = clever_covariate(ds.a[i], nu.m[i], nu.d[i]);
  const double tol = cfg.tmle_tol_factor * detail::mean_abs(w, ds);

  Diagnostics diag;
  double s0 = targeting_sum(ds.y, nu.q, w, nu.tau, ds.w);
  diag.s_trace.push_back(std::abs(s0));

  double eps = solve_epsilon(ds.y, nu.q, w, nu.tau, ds.w);
  std::vector<double> qt(n), vt(n), d_final = nu.d;
  for (std::size_t i = 0; i < n; ++i) qt[i] = nu.q[i] + eps * w[i];
  double s_new = targeting_sum(ds.y, qt, w, nu.tau, ds.w);

  if (eps != 0.0 && std::abs(s_new) < std::abs(s0)) {
    diag.n_iterations = 1;
    diag.epsilon_trace.push_back(eps);
    diag.s_trace.push_back(std::abs(s_new));
    for (std::size_t i = 0; i < n; ++i) vt[i] = nu.v[i] + eps * nu.h[i];
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = ds.y[i] - qt[i];
    DensityOptions dopt;
    dopt.bandwidth = cfg.learners.density_bandwidth;
    dopt.floor_factor = cfg.learners.density_floor_factor;
    dopt.scale_anchor = weighted_iqr(ds.y, ds.w);
    double d_t = residual_density_at_quantile(resid, ds.w, dopt).value_at_zero;
    d_final.assign(n, d_t);
  } else {
    qt = nu.q;
    vt = nu.v;
    s_new = s0;
  }

  diag.targeting_residual = s_new;
  diag.targeting_converged = std::abs(s_new) <= tol;

  double denom = exposure_denominator(ds, nu.m);
  std::vector<double> extra(n);
  for (std::size_t i = 0; i < n; ++i)
    extra[i] = (nu.tau - leq(ds.y[i], qt[i])) / d_final[i];
  EstimatorOutput out = detail::if_based_output(ds, nu.m, qt, vt, extra, denom, nu.tau,
                                                LinkKind::identity, label);
  out.diagnostics = diag;
  return out;
}

}  // namespace alqr

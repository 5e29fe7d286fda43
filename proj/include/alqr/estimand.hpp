#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/core.hpp"
#include "alqr/nuisance.hpp"
#include "alqr/rng.hpp"

namespace alqr {

//! Link transform of the fitted quantile. The log link maps the estimand to
//! the exposure coefficient of a model that is linear on the log-quantile
//! scale; it requires strictly positive quantiles.
inline double link_g(LinkKind link, double q) {
  if (link == LinkKind::identity) return q;
  if (!(q > 0.0)) fail_numeric("NonPositiveQuantile", "log link requires positive quantiles");
  return std::log(q);
}

inline double link_gprime(LinkKind link, double q) {
  if (link == LinkKind::identity) return 1.0;
  if (!(q > 0.0)) fail_numeric("NonPositiveQuantile", "log link requires positive quantiles");
  return 1.0 / q;
}

namespace detail {

// v on the link scale: the dedicated regression for the log link, the plain
// conditional mean of q otherwise.
inline const std::vector<double>& link_v(const NuisanceFits& nu, LinkKind link) {
  if (link == LinkKind::identity) return nu.v;
  if (nu.vg.empty())
    fail_config("InvalidConfig", "log link requires the log-scale conditional mean fit");
  return nu.vg;
}

}  // namespace detail

//! Ratio-of-averages estimate: weighted mean of (a - m)(g(q) - v) over the
//! weighted mean of (a - m)^2. The uncorrected plug-in.
inline double plugin_estimate(const NuisanceFits& nu, const Dataset& ds,
                              LinkKind link = LinkKind::identity) {
  const std::vector<double>& vg = detail::link_v(nu, link);
  double denom = exposure_denominator(ds, nu.m);
  double num = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double wi = ds.weight(i);
    num += wi * (ds.a[i] - nu.m[i]) * (link_g(link, nu.q[i]) - vg[i]);
    wsum += wi;
  }
  return num / wsum / denom;
}

//! Influence function of the estimand at one observation, given its nuisance
//! values, the shared denominator (weighted mean of (a - m)^2) and a candidate
//! psi. The weighted sample mean of these values is zero exactly at the
//! debiased estimate.
inline double eif_evaluate(double y, double a, double m, double q, double v_g, double d,
                           double denom, double psi, double tau,
                           LinkKind link = LinkKind::identity) {
  double resid = a - m;
  double correction = (tau - leq(y, q)) * link_gprime(link, q) / d;
  return resid / denom * (link_g(link, q) - v_g + correction - psi * resid);
}

namespace detail {

// Shared assembly: psi as the exact zero of the weighted influence-function
// average, standard error from the influence values at that psi.
inline EstimatorOutput if_based_output(const Dataset& ds, const std::vector<double>& m,
                                       const std::vector<double>& q,
                                       const std::vector<double>& v_g,
                                       const std::vector<double>& bracket_extra,
                                       double denom, double tau, LinkKind link,
                                       EstimatorKind kind) {
  const std::size_t n = ds.n();
  double num = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double wi = ds.weight(i);
    num += wi * (ds.a[i] - m[i]) * (link_g(link, q[i]) - v_g[i] + bracket_extra[i]);
    wsum += wi;
  }
  double psi = num / wsum / denom;

  double ssq = 0.0;
  std::vector<double> phis(n);
  for (std::size_t i = 0; i < n; ++i) {
    double wi = ds.weight(i);
    double resid = ds.a[i] - m[i];
    double phi =
        resid / denom * (link_g(link, q[i]) - v_g[i] + bracket_extra[i] - psi * resid);
    phis[i] = phi;
    ssq += wi * wi * phi * phi;
  }

  EstimatorOutput out;
  out.psi_hat = psi;
  out.if_values = std::move(phis);
  out.se = std::sqrt(ssq) / wsum;
  out.tau = tau;
  out.estimator = kind;
  out.n_used = n;
  fill_ci(out);
  return out;
}

}  // namespace detail

//! Debiased closed-form estimate: the value of psi that zeroes the weighted
//! average of influence functions, with its influence-function standard error.
inline EstimatorOutput dml_estimate(const NuisanceFits& nu, const Dataset& ds,
                                    LinkKind link = LinkKind::identity,
                                    EstimatorKind label = EstimatorKind::dml) {
  const std::vector<double>& vg = detail::link_v(nu, link);
  double denom = exposure_denominator(ds, nu.m);
  std::vector<double> extra(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i)
    extra[i] = (nu.tau - leq(ds.y[i], nu.q[i])) * link_gprime(link, nu.q[i]) / nu.d[i];
  return detail::if_based_output(ds, nu.m, nu.q, vg, extra, denom, nu.tau, link, label);
}

//! Plug-in estimate with a standard error from the influence function without
//! the density correction term (the plug-in has no debiasing term to match).
inline EstimatorOutput plugin_output(const NuisanceFits& nu, const Dataset& ds,
                                     LinkKind link = LinkKind::identity) {
  const std::vector<double>& vg = detail::link_v(nu, link);
  double denom = exposure_denominator(ds, nu.m);
  std::vector<double> extra(ds.n(), 0.0);
  return detail::if_based_output(ds, nu.m, nu.q, vg, extra, denom, nu.tau, link,
                                 EstimatorKind::plugin);
}

//! Propensity-weighted contrast of the counterfactual quantiles for a binary
//! exposure: weights pi(1 - pi) favor covariate strata where both exposure
//! levels are actually observed.
inline double binary_weighted_estimand(const std::vector<double>& q1,
                                       const std::vector<double>& q0,
                                       const std::vector<double>& pi,
                                       const std::vector<double>& weights = {}) {
  const std::size_t n = q1.size();
  if (q0.size() != n || pi.size() != n || (!weights.empty() && weights.size() != n))
    fail_data("LengthMismatch", "estimand input lengths disagree");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pi[i] >= 0.0 && pi[i] <= 1.0))
      fail_data("NonFiniteValue", "propensity outside [0,1]");
    double wi = (weights.empty() ? 1.0 : weights[i]) * pi[i] * (1.0 - pi[i]);
    num += wi * (q1[i] - q0[i]);
    den += wi;
  }
  if (!(den > 0.0))
    fail_numeric("DegeneratePropensity", "all propensities are degenerate (0 or 1)");
  return num / den;
}

//! True data-generating functions of a simulation design, used to evaluate
//! the estimand itself (no estimation error). Conditional quantiles must be
//! linear in the exposure for the conditional-mean shortcut `v` to be exact;
//! every built-in design satisfies this.
struct TruthHandles {
  std::function<std::vector<double>(Rng&)> draw_l;
  std::function<double(const std::vector<double>&, Rng&)> draw_a;
  std::function<double(const std::vector<double>&)> m;                  // E(A | L)
  std::function<double(double, double, const std::vector<double>&)> q;  // Q_tau(Y | a, L)

  double v(double tau, const std::vector<double>& l) const { return q(tau, m(l), l); }
};

//! Monte Carlo evaluation of the estimand under known truth, in both of its
//! equivalent forms: the paired-difference form over two independent exposure
//! draws per covariate value, and the residualized form. Standard errors are
//! delta-method errors of each ratio of means.
struct EstimandValue {
  double paired = 0.0;  // E[(A - A*)(Q(A) - Q(A*))] / E[(A - A*)^2]
  double residual = 0.0;  // E[(A - m)Q] / E[(A - m)^2]
  double se_paired = 0.0;
  double se_residual = 0.0;
};

inline EstimandValue estimand_population_value(const TruthHandles& truth, double tau,
                                               std::size_t draws, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7472757468ull));
  std::vector<double> pu(draws), pv(draws), ru(draws), rv(draws);
  for (std::size_t r = 0; r < draws; ++r) {
    std::vector<double> l = truth.draw_l(rng);
    double a = truth.draw_a(l, rng);
    double a_star = truth.draw_a(l, rng);
    double qa = truth.q(tau, a, l);
    double qa_star = truth.q(tau, a_star, l);
    double da = a - a_star;
    pu[r] = da * (qa - qa_star);
    pv[r] = da * da;
    double m = truth.m(l);
    ru[r] = (a - m) * qa;
    rv[r] = (a - m) * (a - m);
  }

  auto ratio_with_se = [draws](const std::vector<double>& u, const std::vector<double>& v,
                               double& out, double& se) {
    double ubar = sum(u) / static_cast<double>(draws);
    double vbar = sum(v) / static_cast<double>(draws);
    out = ubar / vbar;
    double ssq = 0.0;
    for (std::size_t r = 0; r < draws; ++r) {
      double g = u[r] - out * v[r];
      ssq += g * g;
    }
    se = std::sqrt(ssq / static_cast<double>(draws)) /
         (vbar * std::sqrt(static_cast<double>(draws)));
  };

  EstimandValue val;
  ratio_with_se(pu, pv, val.paired, val.se_paired);
  ratio_with_se(ru, rv, val.residual, val.se_residual);
  return val;
}

//! Nuisance values filled from the truth functions instead of learners; the
//! plug-in evaluated on these recovers the estimand without first-order bias.
inline NuisanceFits true_nuisances(const Dataset& ds, const TruthHandles& truth, double tau) {
  const std::size_t n = ds.n();
  NuisanceFits nu;
  nu.tau = tau;
  nu.fold_of.assign(n, 0);
  nu.m.resize(n);
  nu.q.resize(n);
  nu.v.resize(n);
  nu.d.assign(n, 1.0);
  std::vector<double> l(ds.p());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds.p(); ++j) l[j] = ds.l(i, j);
    nu.m[i] = truth.m(l);
    nu.q[i] = truth.q(tau, ds.a[i], l);
    nu.v[i] = truth.v(tau, l);
  }
  return nu;
}

}  // namespace alqr

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/core.hpp"
#include "alqr/density.hpp"
#include "alqr/forest.hpp"
#include "alqr/mean_learner.hpp"
#include "alqr/qr.hpp"

namespace alqr {

//! Cross-fitted nuisance values, one entry per observation. Every prediction
//! for row i comes from models trained without row i's fold (folds == 1 means
//! full-data fits evaluated in sample).
struct NuisanceFits {
  std::vector<double> m;   // conditional exposure mean given covariates
  std::vector<double> q;   // conditional outcome quantile at the observed exposure
  std::vector<double> v;   // conditional mean of q given covariates alone
  std::vector<double> d;   // residual density at the fitted quantile, floored positive
  std::vector<double> q1;  // quantile at exposure 1 (binary exposures only)
  std::vector<double> q0;  // quantile at exposure 0 (binary exposures only)
  std::vector<double> h;   // conditional mean of the clever covariate (one-step targeting)
  std::vector<double> vg;  // conditional mean of g(q) for a non-identity link
  std::vector<double> beta;  // exposure coefficient of the fold's parametric quantile fit
  std::vector<int> fold_of;
  double tau = 0.5;
};

namespace detail {

// Seed streams per (fold, learner) so fits are independent and reproducible.
inline std::uint64_t nuisance_seed(std::uint64_t seed, int fold, int slot) {
  return derive_seed(seed, 0x6e750000ull + static_cast<std::uint64_t>(fold) * 16 +
                               static_cast<std::uint64_t>(slot));
}

inline Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < src.cols(); ++j) out(r, j) = src(rows[r], j);
  return out;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& src, const std::vector<std::size_t>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(src[r]);
  return out;
}

}  // namespace detail

//! Weighted mean of (a - m)^2, the denominator shared by every estimator.
//! Guards against a degenerate exposure residual: the estimand is undefined
//! when the exposure is (numerically) a function of the covariates.
inline double exposure_denominator(const Dataset& ds, const std::vector<double>& m) {
  const std::size_t n = ds.n();
  double num = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = ds.a[i] - m[i];
    num += ds.weight(i) * r * r;
    wsum += ds.weight(i);
  }
  double denom = num / wsum;
  double va = weighted_variance(ds.a, ds.w);
  if (!(va > 0.0) || !(denom > 1e-8 * va))
    fail_numeric("DegenerateExposureVariance",
                 "exposure residual variance is numerically zero");
  return denom;
}

//! Fits all nuisance models with K-fold cross-fitting and evaluates them on
//! the held-out rows. The quantile learner is a forest for the flexible
//! estimators and a stepwise parametric fit for the variable-selection ones.
inline NuisanceFits estimate_nuisances(const Dataset& ds, double tau,
                                       const EstimatorConfig& cfg, const FoldPlan& plan) {
  const std::size_t n = ds.n();
  const bool binary = ds.exposure == ExposureKind::binary;
  const bool parametric_q = cfg.estimator == EstimatorKind::dml_vs ||
                            cfg.estimator == EstimatorKind::tmle_vs;
  const bool want_h = (cfg.estimator == EstimatorKind::tmle ||
                       cfg.estimator == EstimatorKind::tmle_vs) &&
                      !binary;
  const bool want_vg = cfg.link == LinkKind::log_link;

  NuisanceFits nu;
  nu.tau = tau;
  nu.fold_of = plan.assignments;
  nu.m.assign(n, 0.0);
  nu.q.assign(n, 0.0);
  nu.v.assign(n, 0.0);
  nu.d.assign(n, 0.0);
  if (binary) {
    nu.q1.assign(n, 0.0);
    nu.q0.assign(n, 0.0);
  }
  if (want_h || cfg.estimator == EstimatorKind::tmle_vs) nu.h.assign(n, 0.0);
  if (want_vg) nu.vg.assign(n, 0.0);
  if (parametric_q) nu.beta.assign(n, 0.0);

  ForestParams fp;
  fp.num_trees = cfg.learners.num_trees;
  fp.min_leaf = cfg.learners.min_leaf;
  fp.subsample = cfg.learners.subsample;
  fp.mtry = cfg.learners.mtry;
  fp.honest = cfg.learners.honest_forest;

  for (int k = 0; k < plan.k; ++k) {
    std::vector<std::size_t> train, eval;
    for (std::size_t i = 0; i < n; ++i) {
      if (plan.k == 1 || plan.assignments[i] != k) train.push_back(i);
      if (plan.assignments[i] == k || plan.k == 1) eval.push_back(i);
    }

    Matrix l_tr = detail::gather_rows(ds.l, train);
    std::vector<double> y_tr = detail::gather(ds.y, train);
    std::vector<double> a_tr = detail::gather(ds.a, train);
    std::vector<double> w_tr = ds.w.empty() ? std::vector<double>{} : detail::gather(ds.w, train);

    MeanModel m_model =
        MeanModel::fit(l_tr, a_tr, binary ? TargetFamily::binary : TargetFamily::continuous,
                       w_tr, detail::nuisance_seed(cfg.seed, k, 0), fp);
    for (std::size_t i : eval) nu.m[i] = m_model.predict(ds.l.row(i));

    // Quantile model on (exposure, covariates); in-sample fitted values on the
    // training rows feed the downstream regressions and the residual density.
    std::vector<double> q_tr(train.size());
    QrFit qr;
    Forest forest;
    if (parametric_q) {
      qr = stepwise_qr_aic(l_tr, a_tr, y_tr, tau, w_tr);
      for (std::size_t r = 0; r < train.size(); ++r)
        q_tr[r] = qr_predict(qr, a_tr[r], l_tr.row(r));
      for (std::size_t i : eval) {
        nu.q[i] = qr_predict(qr, ds.a[i], ds.l.row(i));
        nu.beta[i] = qr.exposure_coef;
        if (binary) {
          nu.q1[i] = qr_predict(qr, 1.0, ds.l.row(i));
          nu.q0[i] = qr_predict(qr, 0.0, ds.l.row(i));
        }
      }
    } else {
      Matrix x_tr(train.size(), 1 + ds.p());
      for (std::size_t r = 0; r < train.size(); ++r) {
        double* row = x_tr.row(r);
        row[0] = a_tr[r];
        for (std::size_t j = 0; j < ds.p(); ++j) row[1 + j] = l_tr(r, j);
      }
      forest = Forest::fit(x_tr, y_tr, fp, detail::nuisance_seed(cfg.seed, k, 1));
      std::vector<double> feat(1 + ds.p());
      for (std::size_t r = 0; r < train.size(); ++r)
        q_tr[r] = forest.predict_quantile(x_tr.row(r), tau);
      for (std::size_t i : eval) {
        for (std::size_t j = 0; j < ds.p(); ++j) feat[1 + j] = ds.l(i, j);
        if (binary) {
          feat[0] = 1.0;
          nu.q1[i] = forest.predict_quantile(feat.data(), tau);
          feat[0] = 0.0;
          nu.q0[i] = forest.predict_quantile(feat.data(), tau);
          nu.q[i] = ds.a[i] == 1.0 ? nu.q1[i] : nu.q0[i];
        } else {
          feat[0] = ds.a[i];
          nu.q[i] = forest.predict_quantile(feat.data(), tau);
        }
      }
    }

    if (parametric_q) {
      // Under the fitted linear form, the conditional mean of q given the
      // covariates is q itself with the exposure replaced by its mean.
      for (std::size_t i : eval) nu.v[i] = nu.q[i] - qr.exposure_coef * (ds.a[i] - nu.m[i]);
    } else if (binary) {
      for (std::size_t i : eval) nu.v[i] = nu.q1[i] * nu.m[i] + nu.q0[i] * (1.0 - nu.m[i]);
    } else {
      MeanModel v_model = MeanModel::fit(l_tr, q_tr, TargetFamily::continuous, w_tr,
                                         detail::nuisance_seed(cfg.seed, k, 2), fp);
      for (std::size_t i : eval) nu.v[i] = v_model.predict(ds.l.row(i));
    }

    std::vector<double> resid(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) resid[r] = y_tr[r] - q_tr[r];
    DensityOptions dopt;
    dopt.bandwidth = cfg.learners.density_bandwidth;
    dopt.floor_factor = cfg.learners.density_floor_factor;
    dopt.scale_anchor = weighted_iqr(y_tr, w_tr);
    DensityEstimate dens = residual_density_at_quantile(resid, w_tr, dopt);
    for (std::size_t i : eval) nu.d[i] = dens.value_at_zero;

    if (want_h) {
      std::vector<double> w_cc(train.size());
      for (std::size_t r = 0; r < train.size(); ++r)
        w_cc[r] = (a_tr[r] - m_model.predict(l_tr.row(r))) / dens.value_at_zero;
      MeanModel h_model = MeanModel::fit(l_tr, w_cc, TargetFamily::continuous, w_tr,
                                         detail::nuisance_seed(cfg.seed, k, 3), fp);
      for (std::size_t i : eval) nu.h[i] = h_model.predict(ds.l.row(i));
    }
    // For a binary exposure the fold density is one shared scalar, so the
    // conditional mean of (a - m)/d given the covariates is identically zero.

    if (want_vg) {
      std::vector<double> gq(train.size());
      for (std::size_t r = 0; r < train.size(); ++r) {
        if (!(q_tr[r] > 0.0))
          fail_numeric("NonPositiveQuantile", "log link requires positive fitted quantiles");
        gq[r] = std::log(q_tr[r]);
      }
      MeanModel vg_model = MeanModel::fit(l_tr, gq, TargetFamily::continuous, w_tr,
                                          detail::nuisance_seed(cfg.seed, k, 4), fp);
      for (std::size_t i : eval) nu.vg[i] = vg_model.predict(ds.l.row(i));
    }
  }

  exposure_denominator(ds, nu.m);
  return nu;
}

}  // namespace alqr

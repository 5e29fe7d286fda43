#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/forest.hpp"
#include "alqr/rng.hpp"

namespace alqr {

enum class TargetFamily { continuous, binary };
enum class MeanModelKind { linear, logistic, forest };

namespace detail {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Weighted least squares on [1, x] with a column-pivoted QR rank check.
inline std::vector<double> wls_coefficients(const Matrix& x, const std::vector<double>& t,
                                            const std::vector<double>& w) {
  const std::size_t n = x.rows(), p = x.cols() + 1;
  Eigen::MatrixXd d(n, p);
  Eigen::VectorXd z(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sw = std::sqrt(w.empty() ? 1.0 : w[i]);
    d(i, 0) = sw;
    for (std::size_t j = 1; j < p; ++j) d(i, j) = sw * x(i, j - 1);
    z(i) = sw * t[i];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(p))
    fail_numeric("SingularDesign", "linear candidate design is rank deficient");
  Eigen::VectorXd b = qr.solve(z);
  return std::vector<double>(b.data(), b.data() + p);
}

inline std::vector<double> logistic_coefficients(const Matrix& x, const std::vector<double>& t,
                                                 const std::vector<double>& w) {
  const std::size_t n = x.rows(), p = x.cols() + 1;
  std::vector<double> b(p, 0.0);
  Eigen::MatrixXd d(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    d(i, 0) = 1.0;
    for (std::size_t j = 1; j < p; ++j) d(i, j) = x(i, j - 1);
  }
  Eigen::Map<Eigen::VectorXd> bv(b.data(), p);
  for (int iter = 0; iter < 30; ++iter) {
    Eigen::VectorXd eta = d * bv;
    Eigen::MatrixXd dtwd = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < n; ++i) {
      double e = std::clamp(eta(i), -30.0, 30.0);
      double mu = expit(e);
      double v = std::max(mu * (1.0 - mu), 1e-10);
      double wi = (w.empty() ? 1.0 : w[i]) * v;
      double zi = e + (t[i] - mu) / v;
      dtwd.noalias() += wi * d.row(i).transpose() * d.row(i);
      rhs.noalias() += wi * zi * d.row(i).transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(dtwd);
    if (ldlt.info() != Eigen::Success)
      fail_numeric("SingularDesign", "logistic candidate weights are degenerate");
    Eigen::VectorXd bnew = ldlt.solve(rhs);
    if (!bnew.allFinite())
      fail_numeric("SingularDesign", "logistic candidate diverged");
    double delta = (bnew - bv).cwiseAbs().maxCoeff();
    bv = bnew;
    if (delta < 1e-10 * (1.0 + bv.cwiseAbs().maxCoeff())) break;
  }
  return b;
}

}  // namespace detail

//! Conditional mean learner with discrete model selection: a parametric
//! candidate (OLS for continuous targets, logistic for binary) against a
//! regression forest, chosen by 5-fold cross-validated weighted squared
//! error. Fewer than 10 rows, or num_trees = 0, fall back to the parametric
//! candidate without selection. Binary predictions are clipped to
//! [0.01, 0.99].
class MeanModel {
 public:
  static MeanModel fit(const Matrix& x, const std::vector<double>& t, TargetFamily family,
                       const std::vector<double>& w, std::uint64_t seed,
                       const ForestParams& fp = {}) {
    const std::size_t n = x.rows();
    if (t.size() != n || (!w.empty() && w.size() != n))
      fail_data("LengthMismatch", "mean learner sizes disagree");

    MeanModel model;
    model.family_ = family;

    // Fewer than 10 rows cannot support selection; num_trees = 0 disables the
    // forest candidate outright. Both take the parametric fit, which uses no
    // randomness at all.
    if (n < 10 || fp.num_trees == 0) {
      model.fit_parametric(x, t, w);
      model.cv_risk_ = model.in_sample_risk(x, t, w);
      return model;
    }

    // Deterministic 5-fold assignment for candidate selection.
    const int kfold = 5;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, 0x6d65616eull));  // "mean" stream
    rng.shuffle(perm);
    std::vector<int> fold(n);
    for (std::size_t r = 0; r < n; ++r) fold[perm[r]] = static_cast<int>(r % kfold);

    double risk_param = cv_risk(x, t, w, family, fold, kfold, seed, fp, false);
    double risk_forest = cv_risk(x, t, w, family, fold, kfold, seed, fp, true);
    if (!std::isfinite(risk_param) && !std::isfinite(risk_forest))
      fail_numeric("AllLearnersFailed", "no mean-learner candidate could be fit");

    if (risk_param <= risk_forest) {
      model.fit_parametric(x, t, w);
      model.cv_risk_ = risk_param;
    } else {
      model.kind_ = MeanModelKind::forest;
      model.forest_ = Forest::fit(x, t, fp, derive_seed(seed, 0xf0ull), w);
      model.cv_risk_ = risk_forest;
    }
    return model;
  }

  double predict(const double* row) const {
    double value = 0.0;
    switch (kind_) {
      case MeanModelKind::linear: {
        value = coef_[0];
        for (std::size_t j = 1; j < coef_.size(); ++j) value += coef_[j] * row[j - 1];
        break;
      }
      case MeanModelKind::logistic: {
        double eta = coef_[0];
        for (std::size_t j = 1; j < coef_.size(); ++j) eta += coef_[j] * row[j - 1];
        value = detail::expit(std::clamp(eta, -30.0, 30.0));
        break;
      }
      case MeanModelKind::forest:
        value = forest_.predict_mean(row);
        break;
    }
    if (family_ == TargetFamily::binary) value = std::clamp(value, 0.01, 0.99);
    return value;
  }

  MeanModelKind kind() const { return kind_; }
  double cv_risk() const { return cv_risk_; }

 private:
  void fit_parametric(const Matrix& x, const std::vector<double>& t,
                      const std::vector<double>& w) {
    if (family_ == TargetFamily::binary) {
      kind_ = MeanModelKind::logistic;
      coef_ = detail::logistic_coefficients(x, t, w);
    } else {
      kind_ = MeanModelKind::linear;
      coef_ = detail::wls_coefficients(x, t, w);
    }
  }

  double in_sample_risk(const Matrix& x, const std::vector<double>& t,
                        const std::vector<double>& w) const {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double wi = w.empty() ? 1.0 : w[i];
      double e = t[i] - predict(x.row(i));
      num += wi * e * e;
      den += wi;
    }
    return num / den;
  }

  static double cv_risk(const Matrix& x, const std::vector<double>& t,
                        const std::vector<double>& w, TargetFamily family,
                        const std::vector<int>& fold, int kfold, std::uint64_t seed,
                        const ForestParams& fp, bool use_forest) {
    const std::size_t n = x.rows();
    double num = 0.0, den = 0.0;
    try {
      for (int f = 0; f < kfold; ++f) {
        std::vector<std::size_t> train;
        for (std::size_t i = 0; i < n; ++i)
          if (fold[i] != f) train.push_back(i);
        Matrix xt(train.size(), x.cols());
        std::vector<double> tt(train.size());
        std::vector<double> wt;
        if (!w.empty()) wt.resize(train.size());
        for (std::size_t r = 0; r < train.size(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) xt(r, c) = x(train[r], c);
          tt[r] = t[train[r]];
          if (!w.empty()) wt[r] = w[train[r]];
        }
        MeanModel cand;
        cand.family_ = family;
        if (use_forest) {
          cand.kind_ = MeanModelKind::forest;
          cand.forest_ = Forest::fit(
              xt, tt, fp, derive_seed(seed, 0xc0ull + static_cast<std::uint64_t>(f)), wt);
        } else {
          cand.fit_parametric(xt, tt, wt);
        }
        for (std::size_t i = 0; i < n; ++i) {
          if (fold[i] != f) continue;
          double wi = w.empty() ? 1.0 : w[i];
          double e = t[i] - cand.predict(x.row(i));
          num += wi * e * e;
          den += wi;
        }
      }
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    return num / den;
  }

  MeanModelKind kind_ = MeanModelKind::linear;
  TargetFamily family_ = TargetFamily::continuous;
  std::vector<double> coef_;
  Forest forest_;
  double cv_risk_ = 0.0;
};

}  // namespace alqr

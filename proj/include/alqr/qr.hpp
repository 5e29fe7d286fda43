#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "alqr/common.hpp"

namespace alqr {

//! Check loss rho_tau(u) = u * (tau - I{u <= 0}).
inline double check_loss(double u, double tau) {
  return u * (tau - (u <= 0.0 ? 1.0 : 0.0));
}

//! Result of a parametric quantile regression fit. `coefficients` aligns
//! with the design columns handed to the solver. For stepwise fits,
//! `selected` lists the retained covariate column ids of the original
//! covariate block and `exposure_coef` the coefficient of the exposure.
struct QrFit {
  std::vector<double> coefficients;
  double objective = 0.0;  // attained weighted mean check loss
  std::vector<int> selected;
  double exposure_coef = 0.0;
  double aic = 0.0;
  std::vector<std::size_t> basis;  // interpolated rows at the optimum
};

namespace detail {

// Greedy selection of linearly independent rows by Gaussian elimination in
// a fixed candidate order. Returns pivot rows (size <= p).
inline std::vector<std::size_t> independent_rows(const Matrix& x,
                                                 const std::vector<std::size_t>& order,
                                                 std::size_t p) {
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> reduced;  // normalized elimination rows
  std::vector<std::size_t> pivcol;
  std::vector<double> v(p);
  for (std::size_t i : order) {
    if (rows.size() == p) break;
    const double* xi = x.row(i);
    double scale = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      v[c] = xi[c];
      scale = std::max(scale, std::abs(xi[c]));
    }
    for (std::size_t k = 0; k < reduced.size(); ++k) {
      double f = v[pivcol[k]];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < p; ++c) v[c] -= f * reduced[k][c];
    }
    std::size_t best = p;
    double best_abs = 1e-10 * (1.0 + scale);
    for (std::size_t c = 0; c < p; ++c) {
      if (std::abs(v[c]) > best_abs) {
        best_abs = std::abs(v[c]);
        best = c;
      }
    }
    if (best == p) continue;
    double inv = 1.0 / v[best];
    for (std::size_t c = 0; c < p; ++c) v[c] *= inv;
    reduced.push_back(v);
    pivcol.push_back(best);
    rows.push_back(i);
  }
  return rows;
}

}  // namespace detail

//! Exact weighted quantile regression: minimizes
//! sum_i w_i rho_tau(y_i - x_i' b) over b by a primal simplex on
//! interpolation bases. Long steps walk the weighted-median breakpoints of a
//! basis edge; the first breakpoint with nonnegative forward slope is taken,
//! which lands on the smallest minimizer of flat stretches. Deterministic:
//! most-violated pivot, smallest-index tie-breaks.
//!
//! `warm` optionally seeds the initial basis with rows of a related fit.
inline QrFit fit_parametric_qr(const Matrix& x, const std::vector<double>& y, double tau,
                               const std::vector<double>& w = {},
                               const std::vector<std::size_t>* warm = nullptr) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  if (n == 0 || p == 0 || y.size() != n || (!w.empty() && w.size() != n))
    fail_data("LengthMismatch", "design/outcome/weight sizes disagree");
  if (!(tau > 0.0 && tau < 1.0)) fail_config("InvalidConfig", "tau must lie in (0,1)");
  if (n < p) fail_numeric("RankDeficient", "fewer rows than columns");

  auto wt = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };

  // Initial basis: warm rows first, then all rows in index order.
  std::vector<std::size_t> order;
  order.reserve(n + (warm ? warm->size() : 0));
  if (warm)
    for (std::size_t i : *warm)
      if (i < n) order.push_back(i);
  for (std::size_t i = 0; i < n; ++i) order.push_back(i);
  std::vector<std::size_t> h = detail::independent_rows(x, order, p);
  if (h.size() < p) fail_numeric("RankDeficient", "design has linearly dependent columns");

  Eigen::MatrixXd xh(p, p);
  Eigen::VectorXd yh(p), b(p), dir(p), cvec(p), lambda(p);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  std::vector<double> r(n), s(n);

  auto refactor = [&]() {
    for (std::size_t k = 0; k < p; ++k) {
      for (std::size_t c = 0; c < p; ++c) xh(k, c) = x(h[k], c);
      yh(k) = y[h[k]];
    }
    lu.compute(xh);
    b = lu.solve(yh);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.row(i);
      double acc = y[i];
      double mag = std::abs(y[i]);
      for (std::size_t c = 0; c < p; ++c) {
        double term = xi[c] * b(c);
        acc -= term;
        mag += std::abs(term);
      }
      // Rounding residue from the basis solve must read as exactly zero or
      // interpolated rows churn the pivot loop through ulp-scale breakpoints.
      r[i] = std::abs(acc) <= 1e-12 * mag ? 0.0 : acc;
    }
    for (std::size_t k : h) r[k] = 0.0;
  };
  refactor();

  std::vector<char> in_basis(n, 0);
  auto rebuild_in_basis = [&]() {
    std::fill(in_basis.begin(), in_basis.end(), 0);
    for (std::size_t k : h) in_basis[k] = 1;
  };
  rebuild_in_basis();

  const std::size_t max_pivots = 200 + 40 * n;
  std::size_t pivots = 0;
  std::vector<std::pair<double, std::size_t>> bps;
  bps.reserve(n);
  std::vector<char> dead(2 * p, 0);
  std::size_t rotations = 0;

  while (true) {
    // Reduced costs: c = -sum_{i not in basis} w_i psi_i x_i with the
    // conservative convention psi = tau for exactly-zero residuals, so a
    // "no violation" verdict is always trustworthy.
    cvec.setZero();
    bool degenerate = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_basis[i]) continue;
      if (r[i] == 0.0) degenerate = true;
      double psi = r[i] > 0.0 ? tau : (r[i] < 0.0 ? tau - 1.0 : tau);
      double f = -wt(i) * psi;
      const double* xi = x.row(i);
      for (std::size_t c = 0; c < p; ++c) cvec(c) += f * xi[c];
    }
    lambda = lu.transpose().solve(cvec);

    double scale = 1.0;
    for (std::size_t k = 0; k < p; ++k) scale = std::max(scale, std::abs(lambda(k)));
    const double tol_v = 1e-11 * scale;

    // Candidate directions ranked by violation; dead ones skipped.
    struct Cand {
      double viol;
      std::size_t j;
      int sigma;
    };
    std::vector<Cand> cands;
    for (std::size_t j = 0; j < p; ++j) {
      double wj = wt(h[j]);
      double hi = lambda(j) - wj * tau;          // move along -d_j
      double lo = -wj * (1.0 - tau) - lambda(j); // move along +d_j
      if (hi > tol_v && !dead[2 * j]) cands.push_back({hi, j, -1});
      if (lo > tol_v && !dead[2 * j + 1]) cands.push_back({lo, j, +1});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.viol != b.viol) return a.viol > b.viol;
      if (a.j != b.j) return a.j < b.j;
      return a.sigma < b.sigma;
    });

    bool moved = false;
    for (const Cand& cand : cands) {
      // Edge direction delta = sigma * X_h^{-1} e_j.
      dir = lu.solve(Eigen::VectorXd::Unit(p, cand.j)) * static_cast<double>(cand.sigma);
      double slope = 0.0, slope_scale = 0.0;
      bps.clear();
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        double si = 0.0;
        for (std::size_t c = 0; c < p; ++c) si += xi[c] * dir(c);
        s[i] = si;
        if (in_basis[i] && i != h[cand.j]) continue;
        if (si == 0.0) continue;
        double wi = wt(i);
        bool pos_side = r[i] > 0.0 || (r[i] == 0.0 && si < 0.0);
        slope += pos_side ? -wi * tau * si : -wi * (tau - 1.0) * si;
        slope_scale += wi * std::abs(si);
        if ((r[i] > 0.0 && si > 0.0) || (r[i] < 0.0 && si < 0.0))
          bps.emplace_back(r[i] / si, i);
      }
      const double tol_flat = 1e-12 * (1.0 + slope_scale);
      if (slope >= -tol_flat) {
        dead[2 * cand.j + (cand.sigma > 0 ? 1 : 0)] = 1;
        continue;
      }
      std::sort(bps.begin(), bps.end());
      std::size_t enter = n;
      double tstar = 0.0;
      for (auto& [t, i] : bps) {
        slope += wt(i) * std::abs(s[i]);
        if (slope >= -tol_flat) {
          enter = i;
          tstar = t;
          break;
        }
      }
      if (enter == n) fail_numeric("NotConverged", "descent direction appears unbounded");
      (void)tstar;
      h[cand.j] = enter;
      refactor();
      rebuild_in_basis();
      std::fill(dead.begin(), dead.end(), 0);
      moved = true;
      if (++pivots > max_pivots) fail_numeric("NotConverged", "pivot limit exceeded");
      break;
    }
    if (moved) continue;

    // No improving edge from this basis. At a degenerate vertex another
    // basis for the same point can expose one; rotate zero-residual rows in.
    if (degenerate && rotations < 4 * p) {
      bool rotated = false;
      for (std::size_t i = 0; i < n && !rotated; ++i) {
        if (in_basis[i] || r[i] != 0.0) continue;
        for (std::size_t j = 0; j < p && !rotated; ++j) {
          std::size_t old = h[j];
          h[j] = i;
          Eigen::MatrixXd test(p, p);
          for (std::size_t k = 0; k < p; ++k)
            for (std::size_t c = 0; c < p; ++c) test(k, c) = x(h[k], c);
          Eigen::PartialPivLU<Eigen::MatrixXd> tl(test);
          double det = std::abs(tl.determinant());
          if (det > 1e-12) {
            refactor();
            rebuild_in_basis();
            std::fill(dead.begin(), dead.end(), 0);
            rotations++;
            rotated = true;
          } else {
            h[j] = old;
          }
        }
      }
      if (rotated) continue;
    }
    break;
  }

  QrFit fit;
  fit.coefficients.assign(b.data(), b.data() + p);
  fit.basis = h;
  double obj = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    obj += wt(i) * check_loss(r[i], tau);
    wsum += wt(i);
  }
  fit.objective = obj / wsum;
  return fit;
}

//! AIC under the asymmetric-Laplace working likelihood:
//! 2k + 2n log(weighted mean check loss). The loss is floored so exact fits
//! compare by parameter count alone.
inline double qr_aic(double mean_loss, std::size_t k, std::size_t n, double y_scale) {
  double floor = 1e-14 * (y_scale + 1e-300);
  return 2.0 * static_cast<double>(k) +
         2.0 * static_cast<double>(n) * std::log(std::max(mean_loss, floor));
}

//! Backward stepwise quantile regression on [intercept, exposure, covariates]
//! minimizing AIC. The intercept and exposure are never removal candidates.
//! Each step removes the single covariate whose removal most decreases AIC
//! (ties: smallest column id); stops when no removal improves.
inline QrFit stepwise_qr_aic(const Matrix& l, const std::vector<double>& a,
                             const std::vector<double>& y, double tau,
                             const std::vector<double>& w = {}) {
  const std::size_t n = y.size();
  const std::size_t pl = l.cols();
  double y_scale = 0.0;
  for (double v : y) y_scale += std::abs(v);
  y_scale /= static_cast<double>(n);

  std::vector<int> active(pl);
  for (std::size_t j = 0; j < pl; ++j) active[j] = static_cast<int>(j);

  auto build = [&](const std::vector<int>& cols) {
    Matrix x(n, 2 + cols.size());
    for (std::size_t i = 0; i < n; ++i) {
      double* row = x.row(i);
      row[0] = 1.0;
      row[1] = a[i];
      for (std::size_t j = 0; j < cols.size(); ++j)
        row[2 + j] = l(i, static_cast<std::size_t>(cols[j]));
    }
    return x;
  };

  Matrix x = build(active);
  QrFit cur = fit_parametric_qr(x, y, tau, w);
  double cur_aic = qr_aic(cur.objective, 2 + active.size(), n, y_scale);

  while (!active.empty()) {
    double best_aic = cur_aic;
    std::size_t best_pos = active.size();
    QrFit best_fit;
    for (std::size_t pos = 0; pos < active.size(); ++pos) {
      std::vector<int> cand_cols = active;
      cand_cols.erase(cand_cols.begin() + static_cast<std::ptrdiff_t>(pos));
      Matrix cx = build(cand_cols);
      QrFit cand = fit_parametric_qr(cx, y, tau, w, &cur.basis);
      double aic = qr_aic(cand.objective, 2 + cand_cols.size(), n, y_scale);
      if (aic < best_aic) {
        best_aic = aic;
        best_pos = pos;
        best_fit = std::move(cand);
      }
    }
    if (best_pos == active.size()) break;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_pos));
    cur = std::move(best_fit);
    cur_aic = best_aic;
  }

  cur.selected = active;
  cur.exposure_coef = cur.coefficients[1];
  cur.aic = cur_aic;
  return cur;
}

//! Prediction from a stepwise fit at exposure value `a_val` and covariate row.
inline double qr_predict(const QrFit& fit, double a_val, const double* l_row) {
  double acc = fit.coefficients[0] + fit.coefficients[1] * a_val;
  for (std::size_t j = 0; j < fit.selected.size(); ++j)
    acc += fit.coefficients[2 + j] * l_row[fit.selected[j]];
  return acc;
}

//! Coefficient covariance of a quantile regression under a homoscedastic
//! residual density f0: tau(1-tau)/f0^2 * (X'WX)^-1 (X'W^2X) (X'WX)^-1.
inline Matrix qr_coef_covariance(const Matrix& x, double tau, double f0,
                                 const std::vector<double>& w = {}) {
  const std::size_t n = x.rows(), p = x.cols();
  Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd xtw2x = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    double wi = w.empty() ? 1.0 : w[i];
    Eigen::Map<const Eigen::VectorXd> xi(x.row(i), p);
    xtwx.noalias() += wi * xi * xi.transpose();
    xtw2x.noalias() += wi * wi * xi * xi.transpose();
  }
  Eigen::MatrixXd inv = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd cov = tau * (1.0 - tau) / (f0 * f0) * inv * xtw2x * inv;
  Matrix out(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) out(i, j) = cov(i, j);
  return out;
}

}  // namespace alqr

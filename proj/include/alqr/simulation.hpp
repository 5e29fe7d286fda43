#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/core.hpp"
#include "alqr/density.hpp"
#include "alqr/estimand.hpp"
#include "alqr/estimators.hpp"
#include "alqr/qr.hpp"
#include "alqr/rng.hpp"

namespace alqr {

//! Benchmark data-generating processes. The first three share one outcome
//! equation over four correlated Gaussian covariates and differ in the
//! exposure and noise laws; exp2 pushes propensity scores toward 0/1, exp3
//! randomizes the exposure, and exp4 is a 50-dimensional sparse setting with
//! a continuous exposure.
enum class Experiment { exp1a, exp1b, exp1c, exp2, exp3, exp4 };

inline std::string to_string(Experiment id) {
  switch (id) {
    case Experiment::exp1a: return "exp1a";
    case Experiment::exp1b: return "exp1b";
    case Experiment::exp1c: return "exp1c";
    case Experiment::exp2: return "exp2";
    case Experiment::exp3: return "exp3";
    case Experiment::exp4: return "exp4";
  }
  return "?";
}

inline Experiment parse_experiment(const std::string& token) {
  for (Experiment id : {Experiment::exp1a, Experiment::exp1b, Experiment::exp1c,
                        Experiment::exp2, Experiment::exp3, Experiment::exp4})
    if (token == to_string(id)) return id;
  fail_config("UnknownExperiment", "unknown experiment '" + token + "'");
}

//! One benchmark scenario: which law, and how many rows per draw.
struct DgpSpec {
  Experiment id = Experiment::exp1a;
  std::size_t n = 500;
};

inline bool experiment_has_binary_exposure(Experiment id) {
  return id == Experiment::exp1a || id == Experiment::exp1b ||
         id == Experiment::exp2 || id == Experiment::exp3;
}

inline std::size_t experiment_dim(Experiment id) {
  return id == Experiment::exp4 ? 50 : 4;
}

namespace detail {

// Lower Cholesky factor of the shared 4x4 covariate correlation matrix.
inline const std::array<double, 16>& low_dim_chol() {
  static const std::array<double, 16> chol = [] {
    // clang-format off
    std::array<double, 16> s = {1.0, 0.5, 0.2, 0.3,
                                0.5, 1.0, 0.7, 0.0,
                                0.2, 0.7, 1.0, 0.0,
                                0.3, 0.0, 0.0, 1.0};
    // clang-format on
    std::array<double, 16> l{};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j <= i; ++j) {
        double acc = s[4 * i + j];
        for (int k = 0; k < j; ++k) acc -= l[4 * i + k] * l[4 * j + k];
        l[4 * i + j] = (i == j) ? std::sqrt(acc) : acc / l[4 * j + j];
      }
    }
    return l;
  }();
  return chol;
}

inline std::vector<double> draw_covariates(Experiment id, Rng& rng) {
  if (id == Experiment::exp4) {
    // Stationary AR(1) recursion, correlation 0.5^|i-j| with unit marginals.
    std::vector<double> l(50);
    l[0] = rng.normal();
    const double carry = 0.5, fresh = std::sqrt(0.75);
    for (std::size_t k = 1; k < 50; ++k) l[k] = carry * l[k - 1] + fresh * rng.normal();
    return l;
  }
  const auto& chol = low_dim_chol();
  std::array<double, 4> z;
  for (auto& zi : z) zi = rng.normal();
  std::vector<double> l(4, 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) l[i] += chol[4 * i + j] * z[j];
  return l;
}

inline double exposure_location(Experiment id, const std::vector<double>& l) {
  switch (id) {
    case Experiment::exp1a:
    case Experiment::exp1b:
      return expit(-0.5 + 0.2 * l[0] - 0.4 * l[1] - 0.4 * l[2] + 0.2 * l[3]);
    case Experiment::exp2:
      // The quadratic and interaction terms push many propensities near 0 or
      // 1. The positive L2^2 loading ties the exposure to the strata where
      // the unmodeled L2^2 outcome term has the most spread, which is what
      // biases a main-effects quantile regression upward at upper quantiles.
      return expit(-0.5 + 0.2 * l[0] - 0.4 * l[1] - 0.4 * l[2] + 0.2 * l[3] -
                   0.5 * l[0] * l[0] + 0.5 * l[1] * l[1] - 0.5 * l[2] * l[3]);
    case Experiment::exp3:
      return 0.5;
    case Experiment::exp1c:
      return -0.5 + l[0] - 2.0 * l[1] - 2.0 * l[2] + l[3];
    case Experiment::exp4: {
      double acc = 0.0;
      for (std::size_t k = 1; k <= 10; ++k) acc += l[k - 1] / static_cast<double>(k);
      return acc;
    }
  }
  return 0.0;
}

inline double draw_exposure(Experiment id, const std::vector<double>& l, Rng& rng) {
  double loc = exposure_location(id, l);
  if (experiment_has_binary_exposure(id)) return rng.bernoulli(loc) ? 1.0 : 0.0;
  return loc + (id == Experiment::exp1c ? 2.0 : 1.0) * rng.normal();
}

inline double outcome_location(Experiment id, double a, const std::vector<double>& l) {
  if (id == Experiment::exp4) {
    double acc = a;
    for (std::size_t k = 1; k <= 5; ++k) acc += l[k - 1] / static_cast<double>(k);
    for (std::size_t k = 11; k <= 15; ++k) acc += l[k - 1] / static_cast<double>(k - 10);
    return acc;
  }
  return 1.0 + a + std::sin(l[0]) + l[1] * l[1] + l[2] + l[3] + l[2] * l[3];
}

// Noise is exponential with an experiment-specific scale except in the
// high-dimensional setting, which uses centered Gaussian noise.
inline double noise_scale(Experiment id, double a) {
  switch (id) {
    case Experiment::exp1a: return 2.0;
    case Experiment::exp1b: return 2.0 + a;
    case Experiment::exp1c: return 4.0;
    case Experiment::exp2: return 3.0;
    case Experiment::exp3: return 2.0;
    case Experiment::exp4: return 2.0;
  }
  return 1.0;
}

inline double draw_noise(Experiment id, double a, Rng& rng) {
  if (id == Experiment::exp4) return 2.0 * rng.normal();
  return rng.exponential(noise_scale(id, a));
}

//! Standard normal quantile: rational initializer plus one Halley step,
//! accurate to near machine precision on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail_config("InvalidConfig", "quantile level outside (0,1)");
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double sqrt2pi = 2.506628274631000502;
  double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  double u = err * sqrt2pi * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

inline double noise_quantile(Experiment id, double a, double tau) {
  if (id == Experiment::exp4) return 2.0 * normal_quantile(tau);
  return -noise_scale(id, a) * std::log1p(-tau);
}

}  // namespace detail

//! Closed-form laws of a benchmark experiment, for estimand evaluation under
//! the truth and for oracle-style checks.
inline TruthHandles make_truth(Experiment id) {
  TruthHandles t;
  t.draw_l = [id](Rng& rng) { return detail::draw_covariates(id, rng); };
  t.draw_a = [id](const std::vector<double>& l, Rng& rng) {
    return detail::draw_exposure(id, l, rng);
  };
  t.m = [id](const std::vector<double>& l) { return detail::exposure_location(id, l); };
  t.q = [id](double tau, double a, const std::vector<double>& l) {
    return detail::outcome_location(id, a, l) + detail::noise_quantile(id, a, tau);
  };
  return t;
}

//! Exposure coefficient of the conditional quantile at level tau.
inline double true_psi(Experiment id, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) fail_config("InvalidConfig", "quantile level outside (0,1)");
  // Noise scale 2 + A adds -ln(1-tau) per unit exposure; every other law is
  // a pure location shift in the exposure.
  if (id == Experiment::exp1b) return 1.0 - std::log1p(-tau);
  return 1.0;
}

struct SimDraw {
  Dataset data;
  TruthHandles truth;
};

//! Draws one dataset from the experiment's law. Deterministic per seed; the
//! estimator seed streams are disjoint from this generation stream, so data
//! and analysis may share one replication seed.
inline SimDraw gen_experiment(const DgpSpec& spec, std::uint64_t seed) {
  if (spec.n < 2) fail_config("InvalidConfig", "simulated sample size must be at least 2");
  SimDraw draw;
  draw.truth = make_truth(spec.id);
  Rng rng(derive_seed(seed, 0x64617461));  // "data"
  Dataset& ds = draw.data;
  ds.exposure = experiment_has_binary_exposure(spec.id) ? ExposureKind::binary
                                                        : ExposureKind::continuous;
  const std::size_t p = experiment_dim(spec.id);
  ds.l = Matrix(spec.n, p);
  ds.y.resize(spec.n);
  ds.a.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    std::vector<double> l = detail::draw_covariates(spec.id, rng);
    double a = detail::draw_exposure(spec.id, l, rng);
    double y = detail::outcome_location(spec.id, a, l) +
               detail::draw_noise(spec.id, a, rng);
    for (std::size_t j = 0; j < p; ++j) ds.l(i, j) = l[j];
    ds.a[i] = a;
    ds.y[i] = y;
  }
  return draw;
}

namespace detail {

// Design matrix [1, A, basis(L)] for the reference quantile regressions.
inline Matrix reference_design(Experiment id, const Dataset& ds, bool oracle_basis) {
  const std::size_t n = ds.n();
  if (!oracle_basis) {
    Matrix x(n, 2 + ds.p());
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = ds.a[i];
      for (std::size_t j = 0; j < ds.p(); ++j) x(i, 2 + j) = ds.l(i, j);
    }
    return x;
  }
  if (id == Experiment::exp4) {
    Matrix x(n, 12);
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = ds.a[i];
      for (std::size_t k = 0; k < 5; ++k) x(i, 2 + k) = ds.l(i, k);
      for (std::size_t k = 0; k < 5; ++k) x(i, 7 + k) = ds.l(i, 10 + k);
    }
    return x;
  }
  Matrix x(n, 7);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = ds.a[i];
    x(i, 2) = std::sin(ds.l(i, 0));
    x(i, 3) = ds.l(i, 1) * ds.l(i, 1);
    x(i, 4) = ds.l(i, 2);
    x(i, 5) = ds.l(i, 3);
    x(i, 6) = ds.l(i, 2) * ds.l(i, 3);
  }
  return x;
}

// Exposure coefficient and sandwich standard error of a fitted quantile
// regression, with the residual density at zero from the shared kernel
// estimator. The basis rows are interpolated exactly by the fit; their zero
// residuals are artifacts of the vertex solution rather than draws from the
// error law, so they are left out of the density estimate.
inline EstimatorOutput sandwich_qr_output(const Matrix& x, const Dataset& ds, double tau,
                                          const QrFit& fit, EstimatorKind label) {
  const std::size_t n = ds.n();
  std::vector<char> basic(n, 0);
  for (std::size_t i : fit.basis)
    if (i < n) basic[i] = 1;
  std::vector<double> resid, rw;
  resid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (basic[i]) continue;
    double pred = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) pred += fit.coefficients[j] * x(i, j);
    resid.push_back(ds.y[i] - pred);
    if (!ds.w.empty()) rw.push_back(ds.w[i]);
  }
  if (resid.empty()) {
    resid.resize(n);
    rw = ds.w;
    for (std::size_t i = 0; i < n; ++i) {
      double pred = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) pred += fit.coefficients[j] * x(i, j);
      resid[i] = ds.y[i] - pred;
    }
  }
  DensityOptions opts;
  opts.scale_anchor = weighted_iqr(ds.y, ds.w);
  double f0 = residual_density_at_quantile(resid, rw, opts).value_at_zero;
  Matrix cov = qr_coef_covariance(x, tau, f0, ds.w);
  EstimatorOutput out;
  out.psi_hat = fit.coefficients[1];
  out.se = std::sqrt(std::max(0.0, cov(1, 1)));
  out.tau = tau;
  out.estimator = label;
  out.n_used = n;
  fill_ci(out);
  return out;
}

}  // namespace detail

//! Quantile regression on the correctly specified outcome basis of the
//! experiment; the benchmark the adaptive estimators are compared against.
inline EstimatorOutput oracle_estimate(const Dataset& dataset, Experiment id, double tau) {
  Dataset ds = validate_dataset(dataset);
  Matrix x = detail::reference_design(id, ds, true);
  QrFit fit = fit_parametric_qr(x, ds.y, tau, ds.w);
  return detail::sandwich_qr_output(x, ds, tau, fit, EstimatorKind::oracle);
}

//! Quantile regression on exposure and covariate main effects only.
inline EstimatorOutput naive_qr_estimate(const Dataset& dataset, double tau) {
  Dataset ds = validate_dataset(dataset);
  Matrix x = detail::reference_design(Experiment::exp1a, ds, false);
  QrFit fit = fit_parametric_qr(x, ds.y, tau, ds.w);
  return detail::sandwich_qr_output(x, ds, tau, fit, EstimatorKind::naive_qr);
}

//! Backward-stepwise quantile regression; the sandwich uses the selected
//! design only.
inline EstimatorOutput qr_vs_estimate(const Dataset& dataset, double tau) {
  Dataset ds = validate_dataset(dataset);
  QrFit fit = stepwise_qr_aic(ds.l, ds.a, ds.y, tau, ds.w);
  const std::size_t n = ds.n();
  Matrix x(n, 2 + fit.selected.size());
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = ds.a[i];
    for (std::size_t j = 0; j < fit.selected.size(); ++j)
      x(i, 2 + j) = ds.l(i, fit.selected[j]);
  }
  return detail::sandwich_qr_output(x, ds, tau, fit, EstimatorKind::qr_vs);
}

//! Estimator tokens accepted by the Monte Carlo driver. The `_cf` variants
//! cross-fit nuisances over the configured fold count; the plain variants
//! fit nuisances on the full sample.
enum class SimEstimator {
  oracle,
  qr,
  qrvs,
  plugin,
  dml,
  dml_cf,
  tmle,
  tmle_cf,
  dml_vs,
  dml_vs_cf,
  tmle_vs,
  tmle_vs_cf,
};

inline std::string to_string(SimEstimator est) {
  switch (est) {
    case SimEstimator::oracle: return "oracle";
    case SimEstimator::qr: return "qr";
    case SimEstimator::qrvs: return "qrvs";
    case SimEstimator::plugin: return "plugin";
    case SimEstimator::dml: return "dml";
    case SimEstimator::dml_cf: return "dml-cf";
    case SimEstimator::tmle: return "tmle";
    case SimEstimator::tmle_cf: return "tmle-cf";
    case SimEstimator::dml_vs: return "dml-vs";
    case SimEstimator::dml_vs_cf: return "dml-vs-cf";
    case SimEstimator::tmle_vs: return "tmle-vs";
    case SimEstimator::tmle_vs_cf: return "tmle-vs-cf";
  }
  return "?";
}

inline SimEstimator parse_sim_estimator(const std::string& token) {
  for (SimEstimator est :
       {SimEstimator::oracle, SimEstimator::qr, SimEstimator::qrvs, SimEstimator::plugin,
        SimEstimator::dml, SimEstimator::dml_cf, SimEstimator::tmle, SimEstimator::tmle_cf,
        SimEstimator::dml_vs, SimEstimator::dml_vs_cf, SimEstimator::tmle_vs,
        SimEstimator::tmle_vs_cf})
    if (token == to_string(est)) return est;
  fail_config("UnknownEstimator", "unknown estimator token '" + token + "'");
}

inline bool sim_estimator_crossfits(SimEstimator est) {
  return est == SimEstimator::dml_cf || est == SimEstimator::tmle_cf ||
         est == SimEstimator::dml_vs_cf || est == SimEstimator::tmle_vs_cf;
}

//! Monte Carlo driver configuration. `folds` only affects the `_cf`
//! estimator variants; `threads` never affects results.
struct McOptions {
  DgpSpec spec;
  std::vector<SimEstimator> estimators;
  std::vector<double> taus{0.5};
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  unsigned threads = 1;
  LearnerSettings learners;
  TmleMode tmle_mode = TmleMode::iterate;
};

//! Replication-averaged performance of one (estimator, tau) pair. Failed
//! replications are excluded from every moment and counted.
struct McCell {
  double true_value = 0.0;
  double mean_psi = 0.0;
  double bias = 0.0;
  double mc_sd = 0.0;
  double mean_se = 0.0;
  double coverage_95 = 0.0;
  std::size_t n_reps = 0;
  std::size_t n_failures = 0;
  bool degenerate_moments = false;  // fewer than 2 surviving replications
};

struct McSummary {
  DgpSpec spec;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::vector<SimEstimator> estimators;
  std::vector<double> taus;
  std::vector<McCell> cells;  // row-major over (estimator, tau)

  const McCell& cell(std::size_t est_idx, std::size_t tau_idx) const {
    return cells[est_idx * taus.size() + tau_idx];
  }
};

inline EstimatorOutput run_sim_estimator(SimEstimator est, double tau, const Dataset& ds,
                                         const McOptions& opts, std::uint64_t rep_seed) {
  switch (est) {
    case SimEstimator::oracle: return oracle_estimate(ds, opts.spec.id, tau);
    case SimEstimator::qr: return naive_qr_estimate(ds, tau);
    case SimEstimator::qrvs: return qr_vs_estimate(ds, tau);
    default: break;
  }
  EstimatorConfig cfg;
  cfg.tau = tau;
  cfg.seed = rep_seed;
  cfg.learners = opts.learners;
  cfg.tmle_mode = opts.tmle_mode;
  cfg.folds = sim_estimator_crossfits(est) ? opts.folds : 1;
  switch (est) {
    case SimEstimator::plugin: cfg.estimator = EstimatorKind::plugin; break;
    case SimEstimator::dml:
    case SimEstimator::dml_cf: cfg.estimator = EstimatorKind::dml; break;
    case SimEstimator::tmle:
    case SimEstimator::tmle_cf: cfg.estimator = EstimatorKind::tmle; break;
    case SimEstimator::dml_vs:
    case SimEstimator::dml_vs_cf: cfg.estimator = EstimatorKind::dml_vs; break;
    case SimEstimator::tmle_vs:
    case SimEstimator::tmle_vs_cf: cfg.estimator = EstimatorKind::tmle_vs; break;
    default: fail_config("InvalidConfig", "reference estimator reached the pipeline switch");
  }
  return estimate(ds, cfg);
}

//! Monte Carlo loop with an injectable per-cell runner, used by tests to
//! substitute synthetic estimators. Replication r depends only on
//! (seed, r): results are bit-identical for any thread count because every
//! replication owns a derived seed and the reduction walks replications in
//! index order.
template <class Runner>
McSummary run_monte_carlo_with(const McOptions& opts, Runner&& runner) {
  if (opts.reps < 1) fail_config("InvalidConfig", "reps must be at least 1");
  if (opts.estimators.empty()) fail_config("InvalidConfig", "no estimators requested");
  if (opts.taus.empty()) fail_config("InvalidConfig", "no quantile levels requested");
  for (double tau : opts.taus) true_psi(opts.spec.id, tau);  // validates levels

  const std::size_t R = opts.reps, E = opts.estimators.size(), T = opts.taus.size();
  struct Slot {
    bool ok = false;
    double psi = 0.0, se = 0.0;
    bool covered = false;
  };
  std::vector<Slot> slots(R * E * T);

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&]() {
    try {
      for (;;) {
        const std::size_t r = next.fetch_add(1);
        if (r >= R) return;
        const std::uint64_t rep_seed = derive_seed(opts.seed, r);
        SimDraw draw = gen_experiment(opts.spec, rep_seed);
        for (std::size_t e = 0; e < E; ++e) {
          for (std::size_t t = 0; t < T; ++t) {
            Slot& slot = slots[(r * E + e) * T + t];
            try {
              EstimatorOutput out = runner(opts.estimators[e], opts.taus[t], draw, rep_seed);
              double truth = true_psi(opts.spec.id, opts.taus[t]);
              slot.ok = true;
              slot.psi = out.psi_hat;
              slot.se = out.se;
              slot.covered = out.ci_low <= truth && truth <= out.ci_high;
            } catch (const Error&) {
              slot.ok = false;
            }
          }
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> guard(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };

  unsigned threads = std::max(1u, opts.threads);
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, R));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  McSummary summary;
  summary.spec = opts.spec;
  summary.reps = R;
  summary.seed = opts.seed;
  summary.estimators = opts.estimators;
  summary.taus = opts.taus;
  summary.cells.resize(E * T);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t t = 0; t < T; ++t) {
      McCell& cell = summary.cells[e * T + t];
      cell.true_value = true_psi(opts.spec.id, opts.taus[t]);
      double sum_psi = 0.0, sum_se = 0.0;
      std::size_t used = 0, covered = 0;
      for (std::size_t r = 0; r < R; ++r) {
        const Slot& slot = slots[(r * E + e) * T + t];
        if (!slot.ok) continue;
        ++used;
        sum_psi += slot.psi;
        sum_se += slot.se;
        if (slot.covered) ++covered;
      }
      cell.n_reps = used;
      cell.n_failures = R - used;
      if (used == 0)
        fail_numeric("AllReplicationsFailed",
                     "estimator " + to_string(opts.estimators[e]) + " at tau " +
                         std::to_string(opts.taus[t]) + " failed in every replication");
      cell.mean_psi = sum_psi / static_cast<double>(used);
      cell.bias = cell.mean_psi - cell.true_value;
      cell.mean_se = sum_se / static_cast<double>(used);
      cell.coverage_95 = static_cast<double>(covered) / static_cast<double>(used);
      double ss = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        const Slot& slot = slots[(r * E + e) * T + t];
        if (!slot.ok) continue;
        double dev = slot.psi - cell.mean_psi;
        ss += dev * dev;
      }
      cell.mc_sd = used > 1 ? std::sqrt(ss / static_cast<double>(used - 1)) : 0.0;
      cell.degenerate_moments = used < 2;
    }
  }
  return summary;
}

inline McSummary run_monte_carlo(const McOptions& opts) {
  return run_monte_carlo_with(
      opts, [&opts](SimEstimator est, double tau, const SimDraw& draw, std::uint64_t rep_seed) {
        return run_sim_estimator(est, tau, draw.data, opts, rep_seed);
      });
}

//! Histogram of true propensity scores over fresh covariate draws: 20 bins
//! of width 0.05 covering [0, 1].
struct PropensityHistogram {
  std::vector<std::size_t> counts = std::vector<std::size_t>(20, 0);
  std::size_t draws = 0;
  double bin_width = 0.05;
};

inline PropensityHistogram propensity_diagnostics(Experiment id, std::size_t draws,
                                                  std::uint64_t seed) {
  if (!experiment_has_binary_exposure(id))
    fail_config("NotBinary", "propensity diagnostics need a binary-exposure experiment");
  if (draws == 0) fail_config("InvalidConfig", "draws must be positive");
  PropensityHistogram hist;
  hist.draws = draws;
  Rng rng(derive_seed(seed, 0x70726f70));  // "prop"
  for (std::size_t i = 0; i < draws; ++i) {
    std::vector<double> l = detail::draw_covariates(id, rng);
    double pi = detail::exposure_location(id, l);
    auto bin = static_cast<std::size_t>(pi * 20.0);
    if (bin >= 20) bin = 19;
    ++hist.counts[bin];
  }
  return hist;
}

}  // namespace alqr

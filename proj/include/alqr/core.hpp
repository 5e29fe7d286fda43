#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alqr/common.hpp"
#include "alqr/rng.hpp"

namespace alqr {

enum class ExposureKind { binary, continuous };
enum class LinkKind { identity, log_link };
// The last three are reference fits produced by the simulation module; they
// are labels only and cannot be requested through estimate().
enum class EstimatorKind { plugin, dml, tmle, dml_vs, tmle_vs, oracle, naive_qr, qr_vs };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::plugin: return "plugin";
    case EstimatorKind::dml: return "dml";
    case EstimatorKind::tmle: return "tmle";
    case EstimatorKind::dml_vs: return "dml-vs";
    case EstimatorKind::tmle_vs: return "tmle-vs";
    case EstimatorKind::oracle: return "oracle";
    case EstimatorKind::naive_qr: return "qr";
    case EstimatorKind::qr_vs: return "qrvs";
  }
  return "?";
}

//! Rectangular analysis data. `w` empty means unit sampling weights.
struct Dataset {
  std::vector<double> y;
  std::vector<double> a;
  Matrix l;  // n x p covariates, p may be 0
  std::vector<double> w;
  ExposureKind exposure = ExposureKind::continuous;

  std::size_t n() const { return y.size(); }
  std::size_t p() const { return l.cols(); }
  double weight(std::size_t i) const { return w.empty() ? 1.0 : w[i]; }
};

//! Checks lengths, finiteness, exposure coding and weight validity.
//! Pure check: the returned dataset is the input unchanged, so the
//! operation is idempotent.
inline Dataset validate_dataset(Dataset ds) {
  std::size_t n = ds.y.size();
  if (n < 2) fail_data("LengthMismatch", "need at least 2 observations");
  if (ds.a.size() != n) fail_data("LengthMismatch", "exposure length != outcome length");
  if (ds.l.cols() > 0 && ds.l.rows() != n)
    fail_data("LengthMismatch", "covariate rows != outcome length");
  if (!ds.w.empty() && ds.w.size() != n)
    fail_data("LengthMismatch", "weight length != outcome length");
  if (!all_finite(ds.y)) fail_data("NonFiniteValue", "outcome contains non-finite value");
  if (!all_finite(ds.a)) fail_data("NonFiniteValue", "exposure contains non-finite value");
  if (!all_finite(ds.l.data()))
    fail_data("NonFiniteValue", "covariates contain non-finite value");
  if (!ds.w.empty()) {
    if (!all_finite(ds.w)) fail_data("NonFiniteValue", "weights contain non-finite value");
    double total = 0.0;
    for (double wi : ds.w) {
      if (wi < 0.0) fail_data("DegenerateWeights", "negative weight");
      total += wi;
    }
    if (total <= 0.0) fail_data("DegenerateWeights", "weights sum to zero");
  }
  if (ds.exposure == ExposureKind::binary) {
    for (double ai : ds.a)
      if (ai != 0.0 && ai != 1.0)
        fail_data("NonBinaryExposure", "binary exposure must be coded 0/1");
  }
  return ds;
}

//! Cross-fitting fold assignment. k == 1 means every row is both training
//! and evaluation (no cross-fitting).
struct FoldPlan {
  std::vector<int> assignments;  // values in [0, k)
  int k = 1;
  std::uint64_t seed = 0;
  bool stratified = false;  // true when a binary exposure stratification was applied
};

//! Random fold assignment; stratified by exposure level when the exposure is
//! binary and both levels have at least k observations. Fold sizes differ by
//! at most one overall and within each stratum.
inline FoldPlan make_folds(const Dataset& ds, int k, std::uint64_t seed) {
  std::size_t n = ds.n();
  if (k < 1) fail_config("InvalidConfig", "folds must be >= 1");
  if (static_cast<std::size_t>(k) > n) fail_config("KTooLarge", "more folds than observations");

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignments.assign(n, 0);
  if (k == 1) return plan;

  Rng rng(derive_seed(seed, 0x666f6c64ull));  // "fold" stream

  std::vector<std::vector<std::size_t>> strata;
  if (ds.exposure == ExposureKind::binary) {
    std::vector<std::size_t> ones, zeros;
    for (std::size_t i = 0; i < n; ++i) (ds.a[i] == 1.0 ? ones : zeros).push_back(i);
    if (ones.size() >= static_cast<std::size_t>(k) &&
        zeros.size() >= static_cast<std::size_t>(k)) {
      plan.stratified = true;
      strata.push_back(std::move(ones));
      strata.push_back(std::move(zeros));
    }
  }
  if (!plan.stratified) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    strata.push_back(std::move(all));
  }

  // A single cyclic label cursor across strata keeps overall fold sizes
  // within one of each other while each stratum stays balanced too.
  int cursor = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  for (auto& stratum : strata) {
    rng.shuffle(stratum);
    for (std::size_t idx : stratum) {
      plan.assignments[idx] = cursor;
      cursor = (cursor + 1) % k;
    }
  }
  return plan;
}

//! Learner hyperparameters shared across the nuisance stage.
struct LearnerSettings {
  int num_trees = 500;
  int min_leaf = 5;
  double subsample = 0.5;
  int mtry = 0;  // 0 means ceil(p/3)
  bool honest_forest = false;  // grow on half the subsample, estimate on the rest
  double density_floor_factor = 1e-3;
  double density_bandwidth = 0.0;  // 0 means Silverman
};

enum class TmleMode { iterate, onestep };

struct EstimatorConfig {
  double tau = 0.5;
  EstimatorKind estimator = EstimatorKind::dml;
  int folds = 5;
  std::uint64_t seed = 0;
  LinkKind link = LinkKind::identity;
  LearnerSettings learners;
  TmleMode tmle_mode = TmleMode::iterate;
  int tmle_max_iter = 50;
  double tmle_tol_factor = 1e-4;
};

inline void validate_config(const EstimatorConfig& cfg) {
  if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) fail_config("InvalidConfig", "tau must lie in (0,1)");
  if (cfg.folds < 1) fail_config("InvalidConfig", "folds must be >= 1");
  // num_trees = 0 disables the forest candidates, leaving a purely parametric
  // learner stack; only the variable-selection estimators have one.
  bool vs = cfg.estimator == EstimatorKind::dml_vs || cfg.estimator == EstimatorKind::tmle_vs;
  if (cfg.learners.num_trees < (vs ? 0 : 1))
    fail_config("InvalidConfig", vs ? "num_trees must be >= 0" : "num_trees must be >= 1");
  if (cfg.learners.min_leaf < 1) fail_config("InvalidConfig", "min_leaf must be >= 1");
  if (!(cfg.learners.subsample > 0.0 && cfg.learners.subsample <= 1.0))
    fail_config("InvalidConfig", "subsample must lie in (0,1]");
  if (cfg.tmle_max_iter < 0) fail_config("InvalidConfig", "tmle_max_iter must be >= 0");
  if (!(cfg.tmle_tol_factor > 0.0)) fail_config("InvalidConfig", "tmle tolerance must be > 0");
  // The targeting update and the variable-selection algebra are derived for
  // the identity link only; the log link is wired through the closed-form
  // estimators where the generalized influence function applies directly.
  if (cfg.link == LinkKind::log_link && cfg.estimator != EstimatorKind::plugin &&
      cfg.estimator != EstimatorKind::dml)
    fail_config("UnsupportedLink", "log link is only available for plugin and dml");
}

struct Diagnostics {
  double targeting_residual = 0.0;  // signed value of the targeting term
  std::vector<double> epsilon_trace;
  std::vector<double> s_trace;  // |S| after each accepted update
  int n_iterations = 0;
  bool targeting_converged = true;
  std::uint64_t fold_seed = 0;
};

struct EstimatorOutput {
  double psi_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double tau = 0.5;
  EstimatorKind estimator = EstimatorKind::dml;
  std::size_t n_used = 0;
  Diagnostics diagnostics;
  // Estimated influence function per row at psi_hat; empty for the reference
  // quantile-regression fits, which carry sandwich standard errors instead.
  std::vector<double> if_values;
};

//! Wald interval psi_hat +/- z * se with the pinned z.
inline void fill_ci(EstimatorOutput& out) {
  out.ci_low = out.psi_hat - kZ975 * out.se;
  out.ci_high = out.psi_hat + kZ975 * out.se;
}

}  // namespace alqr

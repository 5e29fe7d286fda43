#pragma once

#include "alqr/core.hpp"
#include "alqr/estimand.hpp"
#include "alqr/nuisance.hpp"
#include "alqr/targeting.hpp"

namespace alqr {

//! Full pipeline for one quantile level: fold assignment, cross-fitted
//! nuisance estimation, and the configured estimator. The targeted estimator
//! iterates for a binary exposure and takes a single frozen-density step for
//! a continuous one (the iterative scheme has no consistent conditional-mean
//! update without refitting on already-targeted values).
inline EstimatorOutput estimate(const Dataset& dataset, const EstimatorConfig& cfg) {
  validate_config(cfg);
  Dataset ds = validate_dataset(dataset);
  FoldPlan plan = make_folds(ds, cfg.folds, cfg.seed);
  NuisanceFits nu = estimate_nuisances(ds, cfg.tau, cfg, plan);

  EstimatorOutput out;
  switch (cfg.estimator) {
    case EstimatorKind::plugin:
      out = plugin_output(nu, ds, cfg.link);
      break;
    case EstimatorKind::dml:
      out = dml_estimate(nu, ds, cfg.link);
      break;
    case EstimatorKind::tmle:
      out = ds.exposure == ExposureKind::binary ? tmle_binary(ds, nu, cfg)
                                                : tmle_onestep(ds, nu, cfg);
      break;
    case EstimatorKind::dml_vs:
      out = dml_estimate(nu, ds, LinkKind::identity, EstimatorKind::dml_vs);
      break;
    case EstimatorKind::tmle_vs:
      out = tmle_onestep(ds, nu, cfg, EstimatorKind::tmle_vs);
      break;
    default:
      fail_config("InvalidConfig",
                  "reference estimators run through the simulation module, not estimate()");
  }
  out.diagnostics.fold_seed = plan.seed;
  return out;
}

}  // namespace alqr

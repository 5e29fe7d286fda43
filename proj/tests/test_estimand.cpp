#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "alqr/estimand.hpp"
#include "alqr/estimators.hpp"
#include "alqr/nuisance.hpp"
#include "alqr/rng.hpp"

using namespace alqr;

namespace {

Dataset tiny_dataset(std::vector<double> y, std::vector<double> a, ExposureKind kind,
                     std::vector<double> w = {}) {
  Dataset ds;
  ds.y = std::move(y);
  ds.a = std::move(a);
  ds.w = std::move(w);
  ds.l = Matrix(ds.y.size(), 1, 0.0);
  ds.exposure = kind;
  return ds;
}

NuisanceFits fits_of(double tau, std::vector<double> m, std::vector<double> q,
                     std::vector<double> v, std::vector<double> d) {
  NuisanceFits nu;
  nu.tau = tau;
  nu.m = std::move(m);
  nu.q = std::move(q);
  nu.v = std::move(v);
  nu.d = std::move(d);
  nu.fold_of.assign(nu.m.size(), 0);
  return nu;
}

}  // namespace

TEST_CASE("plug-in ratio on a four-row instance") {
  Dataset ds = tiny_dataset({0, 0, 0, 0}, {0, 1, 0, 1}, ExposureKind::binary);
  NuisanceFits nu = fits_of(0.5, {0.5, 0.5, 0.5, 0.5}, {1, 2, 1, 2},
                            {1.5, 1.5, 1.5, 1.5}, {1, 1, 1, 1});
  REQUIRE(plugin_estimate(nu, ds) == 1.0);

  SECTION("no conditional association gives zero") {
    nu.v = nu.q;
    REQUIRE(plugin_estimate(nu, ds) == 0.0);
  }

  SECTION("exposure scaling divides the estimate exactly") {
    double base = plugin_estimate(nu, ds);
    Dataset scaled = ds;
    for (double& ai : scaled.a) ai *= 2.0;
    NuisanceFits nu2 = nu;
    for (double& mi : nu2.m) mi *= 2.0;
    scaled.exposure = ExposureKind::continuous;
    REQUIRE(plugin_estimate(nu2, scaled) == base / 2.0);
  }
}

TEST_CASE("influence function by direct substitution") {
  SECTION("worked example") {
    double phi = eif_evaluate(3.0, 1.0, 0.5, 2.0, 1.5, 0.5, 0.25, 1.0, 0.5);
    REQUIRE(phi == Catch::Approx(2.0).epsilon(1e-14));
  }
  SECTION("exposure at its conditional mean vanishes") {
    REQUIRE(eif_evaluate(3.0, 0.7, 0.7, 2.0, 1.5, 0.5, 0.25, 1.0, 0.5) == 0.0);
  }
  SECTION("indicator includes equality") {
    double phi = eif_evaluate(2.0, 1.0, 0.5, 2.0, 2.0, 0.25, 0.25, 0.0, 0.5);
    REQUIRE(phi == Catch::Approx(2.0 * (-0.5) / 0.25).epsilon(1e-14));
  }
}

TEST_CASE("debiased estimate and its standard error") {
  SECTION("correction cancels when residuals balance") {
    Dataset ds = tiny_dataset({2, 1, 3, 0}, {1, 0, 1, 0}, ExposureKind::binary);
    NuisanceFits nu = fits_of(0.5, {0.5, 0.5, 0.5, 0.5}, {2, 1, 3, 0},
                              {1.5, 1.5, 1.5, 1.5}, {0.8, 0.8, 0.8, 0.8});
    EstimatorOutput dml = dml_estimate(nu, ds);
    REQUIRE(dml.psi_hat == Catch::Approx(plugin_estimate(nu, ds)).epsilon(1e-14));
  }

  SECTION("two-row standard error closed form") {
    Dataset ds = tiny_dataset({2, 2}, {1, 0}, ExposureKind::binary);
    NuisanceFits nu = fits_of(0.5, {0.5, 0.5}, {1, 1}, {0.5, 1.5}, {1, 1});
    EstimatorOutput out = dml_estimate(nu, ds);
    REQUIRE(out.psi_hat == Catch::Approx(1.0).epsilon(1e-14));
    REQUIRE(out.se == Catch::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-14));
    REQUIRE(out.ci_low == Catch::Approx(1.0 - kZ975 * out.se).epsilon(1e-14));
  }

  SECTION("weighted influence functions average to zero at the estimate") {
    Rng rng(2024);
    std::size_t n = 60;
    Dataset ds;
    ds.exposure = ExposureKind::continuous;
    ds.l = Matrix(n, 1);
    NuisanceFits nu;
    nu.tau = 0.7;
    for (std::size_t i = 0; i < n; ++i) {
      ds.l(i, 0) = rng.normal();
      ds.a.push_back(rng.normal());
      ds.y.push_back(rng.normal() * 2.0);
      ds.w.push_back(0.5 + rng.uniform());
      nu.m.push_back(0.3 * ds.l(i, 0));
      nu.q.push_back(ds.a[i] + rng.normal());
      nu.v.push_back(0.5 * nu.m[i]);
      nu.d.push_back(0.2 + rng.uniform());
    }
    nu.fold_of.assign(n, 0);

    EstimatorOutput out = dml_estimate(nu, ds);
    double denom = exposure_denominator(ds, nu.m);
    double acc = 0.0, scale = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double phi = eif_evaluate(ds.y[i], ds.a[i], nu.m[i], nu.q[i], nu.v[i], nu.d[i],
                                denom, out.psi_hat, nu.tau);
      acc += ds.w[i] * phi;
      scale += ds.w[i] * std::abs(phi);
      wsum += ds.w[i];
    }
    REQUIRE(std::abs(acc / wsum) <= 1e-10 * (scale / wsum));
  }
}

TEST_CASE("location shift leaves both estimates bit-identical") {
  // All values are small dyadic rationals, so shifting by 2 is exact in
  // floating point and the invariance can be tested bitwise.
  Dataset ds = tiny_dataset({0.25, 1.5, -0.75, 2.0, 0.5}, {1, 0, 1, 0, 1},
                            ExposureKind::binary);
  NuisanceFits nu = fits_of(0.75, {0.5, 0.25, 0.75, 0.5, 0.25},
                            {0.5, -0.25, 1.0, 0.75, 1.25},
                            {0.25, 0.5, 0.75, 0.25, 0.5}, {0.5, 1, 0.5, 1, 2});
  double plug = plugin_estimate(nu, ds);
  double deb = dml_estimate(nu, ds).psi_hat;

  Dataset shifted = ds;
  for (double& yi : shifted.y) yi += 2.0;
  NuisanceFits nu2 = nu;
  for (double& qi : nu2.q) qi += 2.0;
  for (double& vi : nu2.v) vi += 2.0;
  REQUIRE(plugin_estimate(nu2, shifted) == plug);
  REQUIRE(dml_estimate(nu2, shifted).psi_hat == deb);
}

TEST_CASE("log link") {
  Dataset ds = tiny_dataset({2, 0.5, 3, 1}, {1, 0, 1, 0}, ExposureKind::binary);

  SECTION("identity and log agree when all quantiles equal one") {
    NuisanceFits nu = fits_of(0.5, {0.25, 0.5, 0.75, 0.5}, {1, 1, 1, 1},
                              {1, 1, 1, 1}, {0.5, 0.5, 0.5, 0.5});
    nu.vg.assign(4, 0.0);
    EstimatorOutput base = dml_estimate(nu, ds, LinkKind::identity);
    EstimatorOutput logged = dml_estimate(nu, ds, LinkKind::log_link);
    REQUIRE(base.psi_hat == logged.psi_hat);
    REQUIRE(base.se == logged.se);
  }

  SECTION("nonpositive quantile is rejected") {
    NuisanceFits nu = fits_of(0.5, {0.25, 0.5, 0.75, 0.5}, {1, -1, 1, 1},
                              {1, 1, 1, 1}, {0.5, 0.5, 0.5, 0.5});
    nu.vg.assign(4, 0.0);
    try {
      dml_estimate(nu, ds, LinkKind::log_link);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "NonPositiveQuantile");
    }
  }
}

TEST_CASE("propensity-weighted quantile contrast") {
  SECTION("constant difference passes through") {
    REQUIRE(binary_weighted_estimand({3, 4, 5}, {1, 2, 3}, {0.5, 0.5, 0.5}) == 2.0);
  }
  SECTION("direct two-row evaluation") {
    REQUIRE(binary_weighted_estimand({2, 4}, {1, 1}, {0.2, 0.8}) ==
            Catch::Approx(2.0).epsilon(1e-14));
  }
  SECTION("near-degenerate rows carry almost no weight") {
    double val = binary_weighted_estimand({101, 2}, {1, 1}, {0.999999, 0.5});
    REQUIRE(val == Catch::Approx(1.0).margin(1e-3));
  }
  SECTION("all-degenerate propensities fail") {
    try {
      binary_weighted_estimand({1, 2}, {0, 0}, {1.0, 0.0});
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "DegeneratePropensity");
    }
  }
}

TEST_CASE("population estimand on a two-stratum design") {
  // Covariate takes two equally likely values; exposure is Bernoulli within
  // each stratum and the conditional quantile slope differs by stratum. The
  // estimand is the variance-weighted slope average, here exactly 2 because
  // both strata share the same exposure variance.
  TruthHandles truth;
  truth.draw_l = [](Rng& rng) {
    return std::vector<double>{rng.uniform() < 0.5 ? 0.0 : 1.0};
  };
  truth.draw_a = [](const std::vector<double>& l, Rng& rng) {
    return rng.bernoulli(l[0] == 0.0 ? 0.25 : 0.75) ? 1.0 : 0.0;
  };
  truth.m = [](const std::vector<double>& l) { return l[0] == 0.0 ? 0.25 : 0.75; };
  truth.q = [](double, double a, const std::vector<double>& l) {
    double beta = l[0] == 0.0 ? 1.0 : 3.0;
    return beta * a + 5.0 * l[0];
  };

  EstimandValue val = estimand_population_value(truth, 0.5, 40000, 7);
  REQUIRE(val.paired == Catch::Approx(2.0).margin(3.0 * val.se_paired + 1e-12));
  REQUIRE(val.residual == Catch::Approx(2.0).margin(3.0 * val.se_residual + 1e-12));
  REQUIRE(std::abs(val.paired - val.residual) <=
          3.0 * std::sqrt(val.se_paired * val.se_paired +
                          val.se_residual * val.se_residual));
}

TEST_CASE("plug-in with true nuisances recovers a linear model slope") {
  Rng rng(99);
  std::size_t n = 4000;
  Dataset ds;
  ds.exposure = ExposureKind::continuous;
  ds.l = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double l = rng.normal();
    double a = l + rng.normal();
    double y = a + l + rng.normal();
    ds.l(i, 0) = l;
    ds.a.push_back(a);
    ds.y.push_back(y);
  }
  TruthHandles truth;
  truth.m = [](const std::vector<double>& l) { return l[0]; };
  truth.q = [](double tau, double a, const std::vector<double>& l) {
    // Unit-normal residual quantile shifts the conditional quantile.
    (void)tau;
    return a + l[0];
  };
  NuisanceFits nu = true_nuisances(ds, truth, 0.5);
  REQUIRE(plugin_estimate(nu, ds) == Catch::Approx(1.0).margin(0.08));
}

TEST_CASE("cross-fitted nuisance estimation") {
  Rng rng(31);
  std::size_t n = 80;
  Dataset ds;
  ds.exposure = ExposureKind::binary;
  ds.l = Matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    double l0 = rng.normal(), l1 = rng.normal();
    ds.l(i, 0) = l0;
    ds.l(i, 1) = l1;
    double pr = 1.0 / (1.0 + std::exp(-0.5 * l0));
    ds.a.push_back(rng.bernoulli(pr) ? 1.0 : 0.0);
    ds.y.push_back(1.0 + ds.a[i] + l0 + 0.5 * l1 + rng.normal());
  }

  EstimatorConfig cfg;
  cfg.tau = 0.5;
  cfg.estimator = EstimatorKind::dml;
  cfg.folds = 5;
  cfg.seed = 11;
  cfg.learners.num_trees = 30;

  FoldPlan plan = make_folds(ds, cfg.folds, cfg.seed);
  NuisanceFits nu = estimate_nuisances(ds, cfg.tau, cfg, plan);

  SECTION("shapes, positivity, and the binary decomposition") {
    REQUIRE(nu.m.size() == n);
    REQUIRE(nu.q1.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(nu.d[i] > 0.0);
      REQUIRE(nu.m[i] >= 0.01);
      REQUIRE(nu.m[i] <= 0.99);
      REQUIRE(nu.v[i] == nu.q1[i] * nu.m[i] + nu.q0[i] * (1.0 - nu.m[i]));
      REQUIRE(nu.q[i] == (ds.a[i] == 1.0 ? nu.q1[i] : nu.q0[i]));
    }
  }

  SECTION("held-out predictions never depend on the held-out rows") {
    const int fold = 2;
    Dataset tweaked = ds;
    for (std::size_t i = 0; i < n; ++i)
      if (plan.assignments[i] == fold) tweaked.y[i] += 50.0;
    NuisanceFits nu2 = estimate_nuisances(tweaked, cfg.tau, cfg, plan);

    bool other_changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (plan.assignments[i] == fold) {
        REQUIRE(nu2.m[i] == nu.m[i]);
        REQUIRE(nu2.q[i] == nu.q[i]);
        REQUIRE(nu2.v[i] == nu.v[i]);
        REQUIRE(nu2.d[i] == nu.d[i]);
      } else if (nu2.q[i] != nu.q[i]) {
        other_changed = true;
      }
    }
    REQUIRE(other_changed);
  }

  SECTION("no cross-fitting trains and evaluates on all rows") {
    EstimatorConfig full = cfg;
    full.folds = 1;
    FoldPlan one = make_folds(ds, 1, cfg.seed);
    NuisanceFits nu1 = estimate_nuisances(ds, cfg.tau, full, one);
    REQUIRE(nu1.fold_of == std::vector<int>(n, 0));
    for (std::size_t i = 0; i < n; ++i) REQUIRE(nu1.d[i] == nu1.d[0]);
  }
}

TEST_CASE("parametric quantile nuisances for the selection estimators") {
  Rng rng(47);
  std::size_t n = 120;
  Dataset ds;
  ds.exposure = ExposureKind::continuous;
  ds.l = Matrix(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) ds.l(i, j) = rng.normal();
    ds.a.push_back(ds.l(i, 0) + rng.normal());
    ds.y.push_back(2.0 * ds.a[i] + ds.l(i, 0) - ds.l(i, 1) + rng.normal());
  }

  EstimatorConfig cfg;
  cfg.tau = 0.5;
  cfg.estimator = EstimatorKind::dml_vs;
  cfg.folds = 4;
  cfg.seed = 3;
  FoldPlan plan = make_folds(ds, cfg.folds, cfg.seed);
  NuisanceFits nu = estimate_nuisances(ds, cfg.tau, cfg, plan);

  REQUIRE(nu.beta.size() == n);
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(nu.beta[i] == Catch::Approx(2.0).margin(0.5));
    // The linear form ties the conditional mean to the fit exactly.
    REQUIRE(nu.v[i] == nu.q[i] - nu.beta[i] * (ds.a[i] - nu.m[i]));
  }
}

TEST_CASE("constant exposure is rejected") {
  Rng rng(5);
  std::size_t n = 40;
  Dataset ds;
  ds.exposure = ExposureKind::continuous;
  ds.l = Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    ds.l(i, 0) = rng.normal();
    ds.a.push_back(1.0);
    ds.y.push_back(rng.normal());
  }
  std::vector<double> m(n, 1.0);
  try {
    exposure_denominator(ds, m);
    FAIL("expected throw");
  } catch (const Error& e) {
    REQUIRE(e.code() == "DegenerateExposureVariance");
  }
}

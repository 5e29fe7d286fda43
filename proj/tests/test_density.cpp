#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "alqr/density.hpp"

using namespace alqr;

namespace {
double gauss(double u) {
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
}
}  // namespace

TEST_CASE("kernel value at zero with a forced unit bandwidth") {
  DensityOptions opts;
  opts.bandwidth = 1.0;
  opts.scale_anchor = 1.0;
  SECTION("single zero residual") {
    DensityEstimate est = residual_density_at_quantile({0.0}, {}, opts);
    REQUIRE(est.value_at_zero == Catch::Approx(gauss(0.0)).epsilon(1e-12));
    REQUIRE(est.value_at_zero == Catch::Approx(0.3989422804014327).epsilon(1e-12));
    REQUIRE_FALSE(est.floored);
  }
  SECTION("symmetric residuals at +-1") {
    DensityEstimate est = residual_density_at_quantile({-1.0, 1.0}, {}, opts);
    REQUIRE(est.value_at_zero == Catch::Approx(gauss(1.0)).epsilon(1e-12));
    REQUIRE(est.value_at_zero == Catch::Approx(0.24197072451914337).epsilon(1e-12));
  }
}

TEST_CASE("silverman bandwidth oracle") {
  std::vector<double> r{-2.0, -1.0, 0.0, 1.0, 2.0, 0.5, -0.5, 1.5};
  DensityOptions opts;
  opts.scale_anchor = 1.0;
  DensityEstimate est = residual_density_at_quantile(r, {}, opts);

  double mean = 1.5 / 8.0;
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  var /= 8.0;
  double sd = std::sqrt(var);
  double iqr = weighted_quantile(r, {}, 0.75) - weighted_quantile(r, {}, 0.25);
  double h = 0.9 * std::min(sd, iqr / 1.34) * std::pow(8.0, -0.2);
  REQUIRE(est.bandwidth == Catch::Approx(h).epsilon(1e-12));

  double expect = 0.0;
  for (double v : r) expect += gauss(v / h);
  expect /= 8.0 * h;
  REQUIRE(est.value_at_zero == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("far-away residuals hit the floor") {
  DensityOptions opts;
  opts.bandwidth = 0.5;
  opts.scale_anchor = 2.0;  // floor = 1e-3 / 2
  DensityEstimate est =
      residual_density_at_quantile({100.0, 101.0, 102.0, 105.0}, {}, opts);
  REQUIRE(est.floored);
  REQUIRE(est.value_at_zero == 5e-4);
}

TEST_CASE("identical residuals collapse the bandwidth") {
  DensityOptions opts;
  opts.scale_anchor = 1.0;
  try {
    residual_density_at_quantile({3.0, 3.0, 3.0, 3.0}, {}, opts);
    FAIL("expected throw");
  } catch (const Error& e) {
    REQUIRE(e.code() == "DegenerateResiduals");
  }
}

TEST_CASE("density is exactly scale covariant for dyadic scalings") {
  std::vector<double> r{-1.25, 0.5, 0.75, -0.25, 1.5, 2.0, -0.5, 0.25, 1.0, -1.0};
  DensityOptions opts;
  opts.scale_anchor = 1.5;
  DensityEstimate base = residual_density_at_quantile(r, {}, opts);

  std::vector<double> r2(r);
  for (double& v : r2) v *= 2.0;
  DensityOptions opts2 = opts;
  opts2.scale_anchor = 3.0;
  DensityEstimate scaled = residual_density_at_quantile(r2, {}, opts2);
  REQUIRE(scaled.bandwidth == 2.0 * base.bandwidth);
  REQUIRE(scaled.value_at_zero == base.value_at_zero / 2.0);
}

TEST_CASE("weights shift the estimate toward heavy rows") {
  DensityOptions opts;
  opts.bandwidth = 1.0;
  opts.scale_anchor = 1.0;
  DensityEstimate even = residual_density_at_quantile({0.0, 5.0}, {1.0, 1.0}, opts);
  DensityEstimate tilted = residual_density_at_quantile({0.0, 5.0}, {9.0, 1.0}, opts);
  REQUIRE(tilted.value_at_zero > even.value_at_zero);
  REQUIRE(tilted.value_at_zero == Catch::Approx(0.9 * gauss(0.0) + 0.1 * gauss(5.0)).epsilon(1e-12));
}

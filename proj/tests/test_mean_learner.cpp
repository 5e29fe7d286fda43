#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <vector>

#include "alqr/mean_learner.hpp"
#include "alqr/rng.hpp"

using namespace alqr;

namespace {

Matrix random_features(Rng& rng, std::size_t n, std::size_t p) {
  Matrix x(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) x(i, j) = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("exactly linear target selects the linear candidate") {
  Rng rng(1);
  std::size_t n = 200;
  Matrix x = random_features(rng, n, 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = 1.5 + 2.0 * x(i, 0) - x(i, 1);
  MeanModel m = MeanModel::fit(x, t, TargetFamily::continuous, {}, 4);
  REQUIRE(m.kind() == MeanModelKind::linear);

  // Closed-form least squares oracle on the same data.
  Eigen::MatrixXd d(n, 3);
  Eigen::VectorXd z(n);
  for (std::size_t i = 0; i < n; ++i) {
    d(i, 0) = 1.0;
    d(i, 1) = x(i, 0);
    d(i, 2) = x(i, 1);
    z(i) = t[i];
  }
  Eigen::VectorXd beta = (d.transpose() * d).ldlt().solve(d.transpose() * z);
  for (std::size_t i = 0; i < 10; ++i) {
    double expect = beta(0) + beta(1) * x(i, 0) + beta(2) * x(i, 1);
    REQUIRE(m.predict(x.row(i)) == Catch::Approx(expect).margin(1e-6));
  }
}

TEST_CASE("strongly nonlinear target selects the forest") {
  Rng rng(2);
  std::size_t n = 300;
  Matrix x = random_features(rng, n, 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = (x(i, 0) > 0.0 ? 3.0 : -3.0) + 0.1 * rng.normal();
  ForestParams fp;
  fp.num_trees = 100;
  MeanModel m = MeanModel::fit(x, t, TargetFamily::continuous, {}, 4, fp);
  REQUIRE(m.kind() == MeanModelKind::forest);
  double hi[2] = {1.0, 0.0};
  double lo[2] = {-1.0, 0.0};
  REQUIRE(m.predict(hi) > 2.0);
  REQUIRE(m.predict(lo) < -2.0);
}

TEST_CASE("binary predictions are clipped") {
  Rng rng(3);
  std::size_t n = 60;
  Matrix x = random_features(rng, n, 1);
  std::vector<double> t(n, 1.0);  // constant success
  MeanModel m = MeanModel::fit(x, t, TargetFamily::binary, {}, 5);
  for (std::size_t i = 0; i < 10; ++i) REQUIRE(m.predict(x.row(i)) == 0.99);
}

TEST_CASE("binary family recovers a logistic signal inside the clip range") {
  Rng rng(6);
  std::size_t n = 500;
  Matrix x = random_features(rng, n, 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = rng.bernoulli(detail::expit(0.5 + 1.0 * x(i, 0))) ? 1.0 : 0.0;
  MeanModel m = MeanModel::fit(x, t, TargetFamily::binary, {}, 6);
  double probe_hi[2] = {2.0, 0.0};
  double probe_lo[2] = {-2.0, 0.0};
  double ph = m.predict(probe_hi);
  double pl = m.predict(probe_lo);
  REQUIRE(ph > pl);
  REQUIRE(ph <= 0.99);
  REQUIRE(pl >= 0.01);
  REQUIRE(ph == Catch::Approx(detail::expit(2.5)).margin(0.12));
}

TEST_CASE("fewer than 10 rows falls back to the parametric fit") {
  Rng rng(7);
  Matrix x = random_features(rng, 5, 1);
  std::vector<double> t{1.0, 2.0, 3.0, 2.0, 1.0};
  MeanModel m = MeanModel::fit(x, t, TargetFamily::continuous, {}, 1);
  REQUIRE(m.kind() == MeanModelKind::linear);
}

TEST_CASE("singular linear design falls through to the forest") {
  Rng rng(9);
  std::size_t n = 80;
  Matrix x(n, 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = rng.normal();
    x(i, 0) = v;
    x(i, 1) = 2.0 * v;  // exactly collinear
    t[i] = v * v + 0.1 * rng.normal();
  }
  ForestParams fp;
  fp.num_trees = 50;
  MeanModel m = MeanModel::fit(x, t, TargetFamily::continuous, {}, 2, fp);
  REQUIRE(m.kind() == MeanModelKind::forest);

  SECTION("tiny singular problems fail loudly") {
    Matrix xs(5, 2);
    std::vector<double> ts(5);
    for (std::size_t i = 0; i < 5; ++i) {
      xs(i, 0) = static_cast<double>(i);
      xs(i, 1) = 2.0 * static_cast<double>(i);
      ts[i] = 1.0;
    }
    try {
      MeanModel::fit(xs, ts, TargetFamily::continuous, {}, 2);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "SingularDesign");
    }
  }
}

TEST_CASE("mean learner is seed-deterministic") {
  Rng rng(10);
  std::size_t n = 120;
  Matrix x = random_features(rng, n, 2);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = std::sin(x(i, 0)) + 0.3 * rng.normal();
  ForestParams fp;
  fp.num_trees = 40;
  MeanModel m1 = MeanModel::fit(x, t, TargetFamily::continuous, {}, 11, fp);
  MeanModel m2 = MeanModel::fit(x, t, TargetFamily::continuous, {}, 11, fp);
  REQUIRE(m1.kind() == m2.kind());
  REQUIRE(m1.cv_risk() == m2.cv_risk());
  for (std::size_t i = 0; i < 10; ++i)
    REQUIRE(m1.predict(x.row(i)) == m2.predict(x.row(i)));
}

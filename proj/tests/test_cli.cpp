#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "alqr/cli.hpp"
#include "alqr/rng.hpp"

using namespace alqr;

namespace {

std::filesystem::path test_dir() {
  auto dir = std::filesystem::temp_directory_path() / "alqr_cli_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string tmp_file(const std::string& name, const std::string& content) {
  auto path = test_dir() / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  return path.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSamplePath = "data/sample.csv";

}  // namespace

TEST_CASE("strict csv ingestion") {
  SECTION("clean file parses with column access") {
    std::string path = tmp_file("clean.csv", "Y,A,L1\n1.5,0,0.25\n-2e-3,1,3\n");
    CsvTable t = read_numeric_csv(path);
    REQUIRE(t.rows == 2);
    REQUIRE(t.names == std::vector<std::string>{"Y", "A", "L1"});
    REQUIRE(t.columns[0][0] == 1.5);
    REQUIRE(t.columns[2][1] == 3.0);
    REQUIRE(t.column_index("L1") == 2);
  }
  SECTION("windows line endings are accepted") {
    std::string path = tmp_file("crlf.csv", "Y,A\r\n1,0\r\n2,1\r\n");
    CsvTable t = read_numeric_csv(path);
    REQUIRE(t.rows == 2);
    REQUIRE(t.columns[1][1] == 1.0);
  }
  SECTION("missing file") {
    try {
      read_numeric_csv(test_dir().string() + "/does_not_exist.csv");
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "FileNotFound");
    }
  }
  SECTION("non-numeric cell names its coordinates") {
    std::string path = tmp_file("bad_cell.csv", "Y,A\n1,0\n2,yes\n");
    try {
      read_numeric_csv(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "CsvParse");
      std::string msg = e.what();
      REQUIRE(msg.find("line 3") != std::string::npos);
      REQUIRE(msg.find("column 2") != std::string::npos);
      REQUIRE(msg.find("'A'") != std::string::npos);
    }
  }
  SECTION("empty cell is rejected as missing") {
    std::string path = tmp_file("missing.csv", "Y,A\n1,\n");
    try {
      read_numeric_csv(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "CsvParse");
      REQUIRE(std::string(e.what()).find("missing value") != std::string::npos);
    }
  }
  SECTION("ragged row is rejected") {
    std::string path = tmp_file("ragged.csv", "Y,A\n1,0,9\n");
    try {
      read_numeric_csv(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "CsvParse");
    }
  }
  SECTION("duplicate header is rejected") {
    std::string path = tmp_file("dup.csv", "Y,Y\n1,2\n");
    try {
      read_numeric_csv(path);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "SchemaError");
    }
  }
}

TEST_CASE("dataset assembly from a table") {
  std::string path =
      tmp_file("roles.csv", "Y,A,L1,L2,W\n1,0,0.1,0.2,1\n2,1,0.3,0.4,2\n3,0,0.5,0.6,1\n");
  CsvTable t = read_numeric_csv(path);

  SECTION("explicit covariates in the given order") {
    ColumnRoles roles{"Y", "A", {"L2", "L1"}, ""};
    AssembledData got = dataset_from_csv(t, roles);
    REQUIRE(got.covariate_names == std::vector<std::string>{"L2", "L1"});
    REQUIRE(got.data.l(0, 0) == 0.2);
    REQUIRE(got.data.l(0, 1) == 0.1);
    REQUIRE(got.data.w.empty());
    REQUIRE(got.data.exposure == ExposureKind::binary);
  }
  SECTION("omitted covariates default to all non-role columns") {
    ColumnRoles roles{"Y", "A", {}, "W"};
    AssembledData got = dataset_from_csv(t, roles);
    REQUIRE(got.covariate_names == std::vector<std::string>{"L1", "L2"});
    REQUIRE(got.data.w == std::vector<double>{1, 2, 1});
  }
  SECTION("continuous exposure is detected") {
    ColumnRoles roles{"Y", "L1", {}, ""};
    AssembledData got = dataset_from_csv(t, roles);
    REQUIRE(got.data.exposure == ExposureKind::continuous);
  }
  SECTION("role overlaps are schema errors") {
    for (ColumnRoles roles : {ColumnRoles{"Y", "Y", {}, ""}, ColumnRoles{"Y", "A", {"A"}, ""},
                              ColumnRoles{"Y", "A", {"L1", "L1"}, ""},
                              ColumnRoles{"Y", "A", {}, "A"}}) {
      try {
        dataset_from_csv(t, roles);
        FAIL("expected throw");
      } catch (const Error& e) {
        REQUIRE(e.code() == "SchemaError");
      }
    }
  }
  SECTION("unknown column is a schema error") {
    try {
      dataset_from_csv(t, ColumnRoles{"Y", "B", {}, ""});
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "SchemaError");
    }
  }
}

TEST_CASE("lossless numeric formatting") {
  for (double x : {0.1, -1.0 / 3.0, 1e-308, 1.7976931348623157e308, 0.0, -0.0,
                   2.6127836439231817, 123456789.123456789}) {
    std::string s = format_double(x);
    double back = std::strtod(s.c_str(), nullptr);
    REQUIRE(std::memcmp(&back, &x, sizeof x) == 0);
  }
}

TEST_CASE("analyze command") {
  AnalyzeRequest req;
  req.input = kSamplePath;
  req.roles.outcome = "Y";
  req.roles.exposure = "A";
  req.taus = {0.5};
  req.estimator = EstimatorKind::dml;
  req.folds = 3;
  req.seed = 7;
  req.learners.num_trees = 25;

  SECTION("report rows match direct library calls bit for bit") {
    AnalyzeOutcome outcome = run_analyze_request(req);
    REQUIRE(outcome.exit_code == 0);
    CsvTable t = read_numeric_csv(req.input);
    AssembledData assembled = dataset_from_csv(t, req.roles);
    EstimatorConfig cfg;
    cfg.tau = 0.5;
    cfg.estimator = EstimatorKind::dml;
    cfg.folds = 3;
    cfg.seed = 7;
    cfg.learners.num_trees = 25;
    EstimatorOutput direct = estimate(assembled.data, cfg);

    nlohmann::json parsed = nlohmann::json::parse(outcome.report.dump(2));
    const auto& row = parsed.at("results").at(0);
    REQUIRE(row.at("psi_hat").get<double>() == direct.psi_hat);
    REQUIRE(row.at("se").get<double>() == direct.se);
    REQUIRE(row.at("ci_low").get<double>() == direct.ci_low);
    REQUIRE(row.at("ci_high").get<double>() == direct.ci_high);
    REQUIRE(parsed.at("exposure_kind").get<std::string>() == "binary");
    REQUIRE(parsed.at("covariates").size() == 4);
    REQUIRE(parsed.at("schema_version").get<int>() == 1);
  }

  SECTION("per-level work is thread-invariant") {
    AnalyzeRequest wide = req;
    wide.taus = {0.25, 0.5, 0.75};
    wide.threads = 1;
    AnalyzeOutcome serial = run_analyze_request(wide);
    wide.threads = 4;
    AnalyzeOutcome pooled = run_analyze_request(wide);
    REQUIRE(serial.report.dump(2) == pooled.report.dump(2));
    REQUIRE(serial.exit_code == pooled.exit_code);
  }

  SECTION("same request twice gives byte-identical reports") {
    std::string out1 = (test_dir() / "rep1.json").string();
    std::string out2 = (test_dir() / "rep2.json").string();
    AnalyzeRequest r1 = req, r2 = req;
    r1.out = out1;
    r2.out = out2;
    std::ostringstream sink;
    REQUIRE(cmd_analyze(r1, sink) == 0);
    REQUIRE(cmd_analyze(r2, sink) == 0);
    std::string b1 = slurp(out1), b2 = slurp(out2);
    REQUIRE(!b1.empty());
    REQUIRE(b1 == b2);
  }

  SECTION("csv output is a tidy per-tau table") {
    AnalyzeRequest r = req;
    r.taus = {0.25, 0.5};
    r.out = (test_dir() / "rep.csv").string();
    std::ostringstream sink;
    REQUIRE(cmd_analyze(r, sink) == 0);
    std::string body = slurp(r.out);
    REQUIRE(body.rfind("tau,psi_hat,se,ci_low,ci_high\n", 0) == 0);
    REQUIRE(std::count(body.begin(), body.end(), '\n') == 3);
  }

  SECTION("per-level failures are flagged, not fatal") {
    // Outcomes with a negative lower tail: the log link is well defined at
    // high quantile levels only, so tau=0.05 fails and tau=0.95 succeeds.
    Rng rng(4);
    std::string csv = "Y,A,L1\n";
    for (int i = 0; i < 120; ++i) {
      double l = rng.normal();
      double a = rng.uniform();
      double y = 3.0 + a + l + rng.normal();
      if (i % 5 == 0) y = -2.0 - rng.uniform();
      csv += format_double(y) + ',' + format_double(a) + ',' + format_double(l) + '\n';
    }
    AnalyzeRequest r = req;
    r.input = tmp_file("neg_tail.csv", csv);
    r.taus = {0.05, 0.95};
    r.estimator = EstimatorKind::plugin;
    r.link = LinkKind::log_link;
    AnalyzeOutcome outcome = run_analyze_request(r);
    REQUIRE(outcome.exit_code == 3);
    const auto& rows = outcome.report.at("results");
    REQUIRE(rows.at(0).at("ok").get<bool>() == false);
    REQUIRE(rows.at(0).at("error").at("code").get<std::string>() == "NonPositiveQuantile");
    REQUIRE(rows.at(1).at("ok").get<bool>() == true);
  }

  SECTION("unsupported link is a config error") {
    AnalyzeRequest r = req;
    r.estimator = EstimatorKind::tmle;
    r.link = LinkKind::log_link;
    AnalyzeOutcome outcome = run_analyze_request(r);
    REQUIRE(outcome.exit_code == 2);
    REQUIRE(outcome.report.at("results").at(0).at("error").at("code").get<std::string>() ==
            "UnsupportedLink");
  }
}

TEST_CASE("simulate command") {
  SimulateRequest req;
  req.experiment = "exp3";
  req.n = 60;
  req.reps = 3;
  req.estimators = {"oracle"};
  req.taus = {0.5};
  req.seed = 5;
  req.out = (test_dir() / "table").string();

  SECTION("writes csv and json siblings") {
    std::ostringstream sink;
    REQUIRE(cmd_simulate(req, sink) == 0);
    std::string csv = slurp(req.out + ".csv");
    REQUIRE(csv.rfind("experiment,n,reps,estimator,tau,true_value,bias,mc_sd,mean_se,"
                      "coverage_95,n_reps,n_failures,degenerate_moments\n",
                      0) == 0);
    REQUIRE(csv.find("exp3,60,3,oracle,0.5,1,") != std::string::npos);
    nlohmann::json parsed = nlohmann::json::parse(slurp(req.out + ".json"));
    REQUIRE(parsed.at("cells").size() == 1);
    REQUIRE(parsed.at("cells").at(0).at("n_reps").get<int>() == 3);
  }

  SECTION("single replication flags degenerate moments") {
    SimulateRequest one = req;
    one.reps = 1;
    one.out = (test_dir() / "single").string();
    std::ostringstream sink;
    REQUIRE(cmd_simulate(one, sink) == 0);
    nlohmann::json parsed = nlohmann::json::parse(slurp(one.out + ".json"));
    REQUIRE(parsed.at("cells").at(0).at("mc_sd").get<double>() == 0.0);
    REQUIRE(parsed.at("cells").at(0).at("degenerate_moments").get<bool>());
    REQUIRE(sink.str().find("degenerate moments") != std::string::npos);
  }

  SECTION("unknown experiment") {
    SimulateRequest bad = req;
    bad.experiment = "exp7";
    try {
      std::ostringstream sink;
      cmd_simulate(bad, sink);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "UnknownExperiment");
      REQUIRE(exit_code_for(e) == 2);
    }
  }
}

TEST_CASE("sensitivity command") {
  SensitivityRequest req;
  req.base.input = kSamplePath;
  req.base.roles.outcome = "Y";
  req.base.roles.exposure = "A";
  req.base.taus = {0.5};
  req.base.estimator = EstimatorKind::dml;
  req.base.seed = 11;
  req.base.learners.num_trees = 20;
  req.repeat = 2;
  req.fold_counts = {2, 3};

  SECTION("one row per fold count, tau, and run") {
    SensitivityResult res = run_sensitivity_request(req);
    REQUIRE(res.runs.size() == 4);
    REQUIRE(res.dispersion.size() == 2);
    REQUIRE(res.runs[0].folds == 2);
    REQUIRE(res.runs[2].folds == 3);
    REQUIRE(res.runs[0].seed == derive_seed(11, 0));
    REQUIRE(res.runs[1].seed == derive_seed(11, 1));
  }

  SECTION("fully deterministic estimator has zero dispersion") {
    SensitivityRequest det = req;
    det.base.estimator = EstimatorKind::dml_vs;
    det.base.learners.num_trees = 0;  // parametric learner stack only
    det.fold_counts = {1};
    det.repeat = 3;
    SensitivityResult res = run_sensitivity_request(det);
    REQUIRE(res.runs.size() == 3);
    REQUIRE(std::get<2>(res.dispersion.at(0)) == 0.0);
  }

  SECTION("repeat below two is rejected") {
    SensitivityRequest bad = req;
    bad.repeat = 1;
    try {
      run_sensitivity_request(bad);
      FAIL("expected throw");
    } catch (const Error& e) {
      REQUIRE(e.code() == "InvalidConfig");
    }
  }

  SECTION("csv rendering carries the group dispersion") {
    SensitivityResult res = run_sensitivity_request(req);
    std::string csv = detail::sensitivity_report_csv(res);
    REQUIRE(csv.rfind("folds,tau,run,seed,psi_hat,se,ci_low,ci_high,sd_psi_group\n", 0) ==
            0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);
  }
}

TEST_CASE("thread override environment variable") {
  unsetenv("ALQR_THREADS");
  REQUIRE(effective_threads(3) == 3);
  REQUIRE(effective_threads(0) == 1);
  setenv("ALQR_THREADS", "7", 1);
  REQUIRE(effective_threads(3) == 7);
  setenv("ALQR_THREADS", "zero", 1);
  try {
    effective_threads(3);
    FAIL("expected throw");
  } catch (const Error& e) {
    REQUIRE(e.code() == "InvalidConfig");
  }
  unsetenv("ALQR_THREADS");
}

TEST_CASE("error records and exit codes") {
  Error config(Error::Kind::config, "InvalidConfig", "bad");
  Error data(Error::Kind::data, "SchemaError", "bad");
  Error numeric(Error::Kind::numeric, "NotConverged", "bad");
  REQUIRE(exit_code_for(config) == 2);
  REQUIRE(exit_code_for(data) == 2);
  REQUIRE(exit_code_for(numeric) == 3);
  nlohmann::json rec = detail::error_record(numeric);
  REQUIRE(rec.at("code").get<std::string>() == "NotConverged");
  REQUIRE(rec.at("kind").get<std::string>() == "numeric");
  REQUIRE(rec.at("message").get<std::string>() == "bad");
}

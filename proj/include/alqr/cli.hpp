#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "alqr/estimators.hpp"
#include "alqr/io.hpp"
#include "alqr/simulation.hpp"

namespace alqr {

inline int exit_code_for(const Error& e) {
  return e.kind() == Error::Kind::numeric ? 3 : 2;
}

namespace detail {

inline nlohmann::json error_record(const Error& e) {
  const char* kind = e.kind() == Error::Kind::config ? "config"
                     : e.kind() == Error::Kind::data ? "data"
                                                     : "numeric";
  std::string message = e.what();
  // what() is "code: message"; strip the repeated code prefix.
  const std::string prefix = e.code() + ": ";
  if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
  return nlohmann::json{{"code", e.code()}, {"kind", kind}, {"message", message}};
}

inline EstimatorKind parse_analysis_estimator(const std::string& token) {
  for (EstimatorKind k : {EstimatorKind::plugin, EstimatorKind::dml, EstimatorKind::tmle,
                          EstimatorKind::dml_vs, EstimatorKind::tmle_vs})
    if (token == to_string(k)) return k;
  fail_config("InvalidConfig", "unknown estimator '" + token + "'");
}

inline LinkKind parse_link(const std::string& token) {
  if (token == "identity") return LinkKind::identity;
  if (token == "log") return LinkKind::log_link;
  fail_config("InvalidConfig", "unknown link '" + token + "'");
}

inline TmleMode parse_tmle_mode(const std::string& token) {
  if (token == "iterate") return TmleMode::iterate;
  if (token == "onestep") return TmleMode::onestep;
  fail_config("InvalidConfig", "unknown tmle mode '" + token + "'");
}

}  // namespace detail

//! One analyze invocation: which file, which columns, and the estimator
//! settings shared across the requested quantile levels.
struct AnalyzeRequest {
  std::string input;
  std::string out;
  ColumnRoles roles;
  std::vector<double> taus{0.5};
  EstimatorKind estimator = EstimatorKind::dml;
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  LinkKind link = LinkKind::identity;
  TmleMode tmle_mode = TmleMode::iterate;
  LearnerSettings learners;
  unsigned threads = 1;
};

struct AnalyzeOutcome {
  nlohmann::json report;
  int exit_code = 0;
};

//! Runs every requested quantile level on the input CSV. Per-level estimator
//! errors become flagged rows instead of aborting; the exit code is 0 only
//! when every level succeeded, otherwise the mapped code of the first
//! failure. The JSON report is byte-stable for a fixed request.
inline AnalyzeOutcome run_analyze_request(const AnalyzeRequest& req) {
  if (req.taus.empty()) fail_config("InvalidConfig", "at least one tau is required");
  CsvTable table = read_numeric_csv(req.input);
  AssembledData assembled = dataset_from_csv(table, req.roles);

  nlohmann::json report;
  report["schema_version"] = 1;
  report["command"] = "analyze";
  report["estimator"] = to_string(req.estimator);
  report["link"] = req.link == LinkKind::log_link ? "log" : "identity";
  report["tmle_mode"] = req.tmle_mode == TmleMode::onestep ? "onestep" : "iterate";
  report["folds"] = req.folds;
  report["seed"] = req.seed;
  report["n_rows"] = table.rows;
  report["exposure_kind"] =
      assembled.data.exposure == ExposureKind::binary ? "binary" : "continuous";
  report["outcome"] = req.roles.outcome;
  report["exposure"] = req.roles.exposure;
  report["covariates"] = assembled.covariate_names;
  report["weights"] = req.roles.weights;

  // Levels are independent, so they may run on worker threads; rows are
  // assembled and the exit code chosen in level order afterwards, which
  // keeps the report independent of scheduling.
  const std::size_t levels = req.taus.size();
  std::vector<nlohmann::json> rows(levels);
  std::vector<int> codes(levels, 0);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= levels) return;
      EstimatorConfig cfg;
      cfg.tau = req.taus[t];
      cfg.estimator = req.estimator;
      cfg.folds = req.folds;
      cfg.seed = req.seed;
      cfg.link = req.link;
      cfg.tmle_mode = req.tmle_mode;
      cfg.learners = req.learners;
      nlohmann::json row;
      row["tau"] = req.taus[t];
      try {
        EstimatorOutput est = estimate(assembled.data, cfg);
        row["ok"] = true;
        row["psi_hat"] = est.psi_hat;
        row["se"] = est.se;
        row["ci_low"] = est.ci_low;
        row["ci_high"] = est.ci_high;
        row["n_used"] = est.n_used;
        row["diagnostics"] = {
            {"fold_seed", est.diagnostics.fold_seed},
            {"n_iterations", est.diagnostics.n_iterations},
            {"targeting_converged", est.diagnostics.targeting_converged},
            {"targeting_residual", est.diagnostics.targeting_residual},
            {"epsilon_trace", est.diagnostics.epsilon_trace},
            {"s_trace", est.diagnostics.s_trace},
        };
      } catch (const Error& e) {
        row["ok"] = false;
        row["error"] = detail::error_record(e);
        codes[t] = exit_code_for(e);
      }
      rows[t] = std::move(row);
    }
  };
  unsigned threads = std::max(1u, req.threads);
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, levels));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  int exit_code = 0;
  nlohmann::json results = nlohmann::json::array();
  for (std::size_t t = 0; t < levels; ++t) {
    if (exit_code == 0) exit_code = codes[t];
    results.push_back(std::move(rows[t]));
  }
  report["results"] = std::move(results);
  return {std::move(report), exit_code};
}

namespace detail {

//! Tidy CSV rendering of an analyze report: successful levels only, one row
//! per tau, suitable for external plotting.
inline std::string analyze_report_csv(const nlohmann::json& report) {
  std::string out = "tau,psi_hat,se,ci_low,ci_high\n";
  for (const auto& row : report.at("results")) {
    if (!row.at("ok").get<bool>()) continue;
    out += format_double(row.at("tau").get<double>());
    out += ',';
    out += format_double(row.at("psi_hat").get<double>());
    out += ',';
    out += format_double(row.at("se").get<double>());
    out += ',';
    out += format_double(row.at("ci_low").get<double>());
    out += ',';
    out += format_double(row.at("ci_high").get<double>());
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline int cmd_analyze(const AnalyzeRequest& req, std::ostream& log = std::cout) {
  AnalyzeOutcome outcome = run_analyze_request(req);
  if (!req.out.empty()) {
    if (path_wants_csv(req.out))
      write_text_file(req.out, detail::analyze_report_csv(outcome.report));
    else
      write_text_file(req.out, outcome.report.dump(2) + "\n");
  }
  for (const auto& row : outcome.report["results"]) {
    if (row["ok"].get<bool>())
      log << "tau=" << format_double(row["tau"].get<double>())
          << " psi=" << format_double(row["psi_hat"].get<double>())
          << " se=" << format_double(row["se"].get<double>())
          << " ci=[" << format_double(row["ci_low"].get<double>()) << ", "
          << format_double(row["ci_high"].get<double>()) << "]\n";
    else
      log << "tau=" << format_double(row["tau"].get<double>()) << " FAILED ("
          << row["error"]["code"].get<std::string>() << ")\n";
  }
  if (!req.out.empty()) log << "report written to " << req.out << "\n";
  return outcome.exit_code;
}

//! One simulate invocation: experiment, scale, estimator tokens, levels.
struct SimulateRequest {
  std::string experiment = "exp1a";
  std::size_t n = 500;
  std::size_t reps = 200;
  std::vector<std::string> estimators{"oracle"};
  std::vector<double> taus{0.5};
  std::uint64_t seed = 1;
  std::size_t folds = 5;
  unsigned threads = 1;
  LearnerSettings learners;
  TmleMode tmle_mode = TmleMode::iterate;
  std::string out;

  // Benchmark tables were produced with honest forests; plain analyses keep
  // the library default (off) unless asked.
  SimulateRequest() { learners.honest_forest = true; }
};

namespace detail {

inline nlohmann::json simulate_report_json(const McSummary& sum) {
  nlohmann::json report;
  report["schema_version"] = 1;
  report["command"] = "simulate";
  report["experiment"] = to_string(sum.spec.id);
  report["n"] = sum.spec.n;
  report["reps"] = sum.reps;
  report["seed"] = sum.seed;
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t e = 0; e < sum.estimators.size(); ++e) {
    for (std::size_t t = 0; t < sum.taus.size(); ++t) {
      const McCell& cell = sum.cell(e, t);
      cells.push_back({
          {"estimator", to_string(sum.estimators[e])},
          {"tau", sum.taus[t]},
          {"true_value", cell.true_value},
          {"bias", cell.bias},
          {"mc_sd", cell.mc_sd},
          {"mean_se", cell.mean_se},
          {"coverage_95", cell.coverage_95},
          {"n_reps", cell.n_reps},
          {"n_failures", cell.n_failures},
          {"degenerate_moments", cell.degenerate_moments},
      });
    }
  }
  report["cells"] = std::move(cells);
  return report;
}

inline std::string simulate_report_csv(const McSummary& sum) {
  std::string out =
      "experiment,n,reps,estimator,tau,true_value,bias,mc_sd,mean_se,coverage_95,"
      "n_reps,n_failures,degenerate_moments\n";
  for (std::size_t e = 0; e < sum.estimators.size(); ++e) {
    for (std::size_t t = 0; t < sum.taus.size(); ++t) {
      const McCell& cell = sum.cell(e, t);
      out += to_string(sum.spec.id);
      out += ',' + std::to_string(sum.spec.n);
      out += ',' + std::to_string(sum.reps);
      out += ',' + to_string(sum.estimators[e]);
      out += ',' + format_double(sum.taus[t]);
      out += ',' + format_double(cell.true_value);
      out += ',' + format_double(cell.bias);
      out += ',' + format_double(cell.mc_sd);
      out += ',' + format_double(cell.mean_se);
      out += ',' + format_double(cell.coverage_95);
      out += ',' + std::to_string(cell.n_reps);
      out += ',' + std::to_string(cell.n_failures);
      out += ',';
      out += cell.degenerate_moments ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

}  // namespace detail

//! Runs the Monte Carlo driver and writes the summary table as both CSV and
//! JSON siblings of the requested output path.
inline int cmd_simulate(const SimulateRequest& req, std::ostream& log = std::cout) {
  McOptions opts;
  opts.spec.id = parse_experiment(req.experiment);
  opts.spec.n = req.n;
  opts.reps = req.reps;
  opts.taus = req.taus;
  opts.seed = req.seed;
  opts.folds = req.folds;
  opts.threads = req.threads;
  opts.learners = req.learners;
  opts.tmle_mode = req.tmle_mode;
  for (const std::string& token : req.estimators)
    opts.estimators.push_back(parse_sim_estimator(token));

  McSummary sum = run_monte_carlo(opts);

  if (!req.out.empty()) {
    std::string csv_path = path_with_extension(req.out, ".csv");
    std::string json_path = path_with_extension(req.out, ".json");
    write_text_file(csv_path, detail::simulate_report_csv(sum));
    write_text_file(json_path, detail::simulate_report_json(sum).dump(2) + "\n");
    log << "table written to " << csv_path << " and " << json_path << "\n";
  }
  for (std::size_t e = 0; e < sum.estimators.size(); ++e)
    for (std::size_t t = 0; t < sum.taus.size(); ++t) {
      const McCell& cell = sum.cell(e, t);
      log << to_string(sum.estimators[e]) << " tau=" << format_double(sum.taus[t])
          << " bias=" << format_double(cell.bias) << " sd=" << format_double(cell.mc_sd)
          << " se=" << format_double(cell.mean_se)
          << " cov=" << format_double(cell.coverage_95);
      if (cell.n_failures > 0) log << " failures=" << cell.n_failures;
      if (cell.degenerate_moments) log << " (degenerate moments)";
      log << "\n";
    }
  return 0;
}

//! Seed/fold stability sweep: the same analysis repeated with fresh derived
//! seeds for each configured fold count.
struct SensitivityRequest {
  AnalyzeRequest base;
  std::size_t repeat = 10;
  std::vector<std::size_t> fold_counts{5, 10};
};

struct SensitivityRun {
  std::size_t folds = 0;
  double tau = 0.0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double psi_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct SensitivityResult {
  std::vector<SensitivityRun> runs;
  // across-run sample SD of psi_hat per (folds, tau), in run-table order
  std::vector<std::tuple<std::size_t, double, double>> dispersion;
};

inline SensitivityResult run_sensitivity_request(const SensitivityRequest& req) {
  if (req.repeat < 2) fail_config("InvalidConfig", "repeat must be at least 2");
  if (req.fold_counts.empty()) fail_config("InvalidConfig", "at least one fold count");
  if (req.base.taus.empty()) fail_config("InvalidConfig", "at least one tau is required");
  CsvTable table = read_numeric_csv(req.base.input);
  AssembledData assembled = dataset_from_csv(table, req.base.roles);

  SensitivityResult result;
  for (std::size_t folds : req.fold_counts) {
    for (double tau : req.base.taus) {
      std::vector<double> psis;
      for (std::size_t r = 0; r < req.repeat; ++r) {
        // Matched seed sequence across fold counts so sweeps are paired.
        std::uint64_t run_seed = derive_seed(req.base.seed, r);
        EstimatorConfig cfg;
        cfg.tau = tau;
        cfg.estimator = req.base.estimator;
        cfg.folds = folds;
        cfg.seed = run_seed;
        cfg.link = req.base.link;
        cfg.tmle_mode = req.base.tmle_mode;
        cfg.learners = req.base.learners;
        EstimatorOutput est = estimate(assembled.data, cfg);
        result.runs.push_back(
            {folds, tau, r, run_seed, est.psi_hat, est.se, est.ci_low, est.ci_high});
        psis.push_back(est.psi_hat);
      }
      result.dispersion.emplace_back(folds, tau, sample_sd(psis));
    }
  }
  return result;
}

namespace detail {

inline nlohmann::json sensitivity_report_json(const SensitivityRequest& req,
                                              const SensitivityResult& res) {
  nlohmann::json report;
  report["schema_version"] = 1;
  report["command"] = "sensitivity";
  report["estimator"] = to_string(req.base.estimator);
  report["repeat"] = req.repeat;
  report["fold_counts"] = req.fold_counts;
  report["seed"] = req.base.seed;
  nlohmann::json runs = nlohmann::json::array();
  for (const SensitivityRun& run : res.runs)
    runs.push_back({
        {"folds", run.folds},
        {"tau", run.tau},
        {"run", run.run},
        {"seed", run.seed},
        {"psi_hat", run.psi_hat},
        {"se", run.se},
        {"ci_low", run.ci_low},
        {"ci_high", run.ci_high},
    });
  report["runs"] = std::move(runs);
  nlohmann::json disp = nlohmann::json::array();
  for (const auto& [folds, tau, sd] : res.dispersion)
    disp.push_back({{"folds", folds}, {"tau", tau}, {"sd_psi", sd}});
  report["dispersion"] = std::move(disp);
  return report;
}

inline std::string sensitivity_report_csv(const SensitivityResult& res) {
  std::string out = "folds,tau,run,seed,psi_hat,se,ci_low,ci_high,sd_psi_group\n";
  for (const SensitivityRun& run : res.runs) {
    double group_sd = 0.0;
    for (const auto& [folds, tau, sd] : res.dispersion)
      if (folds == run.folds && tau == run.tau) group_sd = sd;
    out += std::to_string(run.folds);
    out += ',' + format_double(run.tau);
    out += ',' + std::to_string(run.run);
    out += ',' + std::to_string(run.seed);
    out += ',' + format_double(run.psi_hat);
    out += ',' + format_double(run.se);
    out += ',' + format_double(run.ci_low);
    out += ',' + format_double(run.ci_high);
    out += ',' + format_double(group_sd);
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline int cmd_sensitivity(const SensitivityRequest& req, std::ostream& log = std::cout) {
  SensitivityResult res = run_sensitivity_request(req);
  if (!req.base.out.empty()) {
    if (path_wants_csv(req.base.out))
      write_text_file(req.base.out, detail::sensitivity_report_csv(res));
    else
      write_text_file(req.base.out,
                      detail::sensitivity_report_json(req, res).dump(2) + "\n");
    log << "table written to " << req.base.out << "\n";
  }
  for (const auto& [folds, tau, sd] : res.dispersion)
    log << "folds=" << folds << " tau=" << format_double(tau)
        << " sd_psi=" << format_double(sd) << "\n";
  return 0;
}

//! ALQR_THREADS environment override; invalid values are a config error.
inline unsigned effective_threads(unsigned requested) {
  const char* env = std::getenv("ALQR_THREADS");
  if (env == nullptr || *env == '\0') return requested == 0 ? 1 : requested;
  char* end = nullptr;
  long parsed = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || parsed < 1)
    fail_config("InvalidConfig", "ALQR_THREADS must be a positive integer");
  return static_cast<unsigned>(parsed);
}

}  // namespace alqr

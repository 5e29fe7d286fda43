// Command-line front end: analyze a CSV, reproduce the benchmark Monte
// Carlo tables, or sweep seed/fold sensitivity. Exit codes: 0 success,
// 2 configuration or data error, 3 numeric failure.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "alqr/cli.hpp"

namespace {

struct CommonFlags {
  std::string input;
  std::string out;
  std::string outcome;
  std::string exposure;
  std::vector<std::string> covariates;
  std::string weights;
  std::vector<double> taus{0.5};
  std::string estimator = "dml";
  std::size_t folds = 5;
  std::uint64_t seed = 42;
  std::string link = "identity";
  std::string tmle_mode = "iterate";
  unsigned threads = 1;
  std::size_t trees = 500;
  bool honest = false;
};

void add_analyze_flags(CLI::App* cmd, CommonFlags& flags, bool out_required,
                       bool with_folds = true) {
  cmd->add_option("--input", flags.input, "input CSV path")->required();
  cmd->add_option("--outcome", flags.outcome, "outcome column name")->required();
  cmd->add_option("--exposure", flags.exposure, "exposure column name")->required();
  cmd->add_option("--covariates", flags.covariates,
                  "covariate column names (default: all non-role columns)")
      ->delimiter(',');
  cmd->add_option("--weights", flags.weights, "sampling-weight column name");
  cmd->add_option("--tau", flags.taus, "quantile levels in (0,1)")
      ->delimiter(',')
      ->required();
  cmd->add_option("--estimator", flags.estimator,
                  "plugin | dml | tmle | dml-vs | tmle-vs");
  if (with_folds) cmd->add_option("--folds", flags.folds, "cross-fitting folds (1 = none)");
  cmd->add_option("--seed", flags.seed, "master seed");
  cmd->add_option("--link", flags.link, "identity | log");
  cmd->add_option("--tmle-mode", flags.tmle_mode, "iterate | onestep");
  cmd->add_option("--trees", flags.trees, "quantile-forest size");
  cmd->add_flag("--honest,!--no-honest", flags.honest,
                "grow forest trees on half of each subsample, estimate on the rest");
  cmd->add_option("--threads", flags.threads, "worker threads (never changes results)");
  auto* out = cmd->add_option("--out", flags.out, "output path (.json or .csv)");
  if (out_required) out->required();
}

alqr::AnalyzeRequest to_analyze_request(const CommonFlags& flags) {
  alqr::AnalyzeRequest req;
  req.input = flags.input;
  req.out = flags.out;
  req.roles.outcome = flags.outcome;
  req.roles.exposure = flags.exposure;
  req.roles.covariates = flags.covariates;
  req.roles.weights = flags.weights;
  req.taus = flags.taus;
  req.estimator = alqr::detail::parse_analysis_estimator(flags.estimator);
  req.folds = flags.folds;
  req.seed = flags.seed;
  req.link = alqr::detail::parse_link(flags.link);
  req.tmle_mode = alqr::detail::parse_tmle_mode(flags.tmle_mode);
  req.learners.num_trees = flags.trees;
  req.learners.honest_forest = flags.honest;
  req.threads = alqr::effective_threads(flags.threads);
  return req;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"assumption-lean quantile exposure-effect estimation"};
  app.require_subcommand(1);

  CommonFlags analyze_flags;
  CLI::App* analyze = app.add_subcommand("analyze", "estimate from a CSV file");
  add_analyze_flags(analyze, analyze_flags, false);

  alqr::SimulateRequest sim;
  std::string sim_tmle_mode = "iterate";
  std::size_t sim_trees = 500;
  CLI::App* simulate = app.add_subcommand("simulate", "run a benchmark experiment");
  simulate->add_option("--experiment", sim.experiment,
                       "exp1a | exp1b | exp1c | exp2 | exp3 | exp4")
      ->required();
  simulate->add_option("--n", sim.n, "sample size per replication");
  simulate->add_option("--reps", sim.reps, "number of replications");
  simulate->add_option("--estimators", sim.estimators,
                       "tokens: oracle,qr,qrvs,plugin,dml,dml-cf,tmle,tmle-cf,"
                       "dml-vs,dml-vs-cf,tmle-vs,tmle-vs-cf")
      ->delimiter(',')
      ->required();
  simulate->add_option("--tau", sim.taus, "quantile levels")->delimiter(',');
  simulate->add_option("--seed", sim.seed, "master seed");
  simulate->add_option("--folds", sim.folds, "folds for the -cf estimator variants");
  simulate->add_option("--trees", sim_trees, "quantile-forest size");
  simulate->add_flag("--honest,!--no-honest", sim.learners.honest_forest,
                     "honest forests (default on; the benchmarks assume them)");
  simulate->add_option("--tmle-mode", sim_tmle_mode, "iterate | onestep");
  simulate->add_option("--threads", sim.threads, "worker threads (never changes results)");
  simulate->add_option("--out", sim.out, "output stem; .csv and .json are written");

  CommonFlags sens_flags;
  std::size_t repeat = 10;
  std::vector<std::size_t> fold_counts{5, 10};
  CLI::App* sensitivity =
      app.add_subcommand("sensitivity", "seed/fold stability sweep of an analysis");
  add_analyze_flags(sensitivity, sens_flags, false, /*with_folds=*/false);
  sensitivity->add_option("--repeat", repeat, "independent runs per fold count (>= 2)");
  sensitivity->add_option("--folds", fold_counts, "fold counts to sweep, e.g. 5,10")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*analyze) return alqr::cmd_analyze(to_analyze_request(analyze_flags));
    if (*simulate) {
      sim.tmle_mode = alqr::detail::parse_tmle_mode(sim_tmle_mode);
      sim.learners.num_trees = sim_trees;
      sim.threads = alqr::effective_threads(sim.threads);
      return alqr::cmd_simulate(sim);
    }
    if (*sensitivity) {
      alqr::SensitivityRequest req;
      req.base = to_analyze_request(sens_flags);
      req.repeat = repeat;
      req.fold_counts = fold_counts;
      return alqr::cmd_sensitivity(req);
    }
  } catch (const alqr::Error& e) {
    std::cerr << alqr::detail::error_record(e).dump() << "\n";
    return alqr::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":{\"code\":\"Internal\",\"message\":\"" << e.what()
              << "\"}}\n";
    return 1;
  }
  return 2;
}

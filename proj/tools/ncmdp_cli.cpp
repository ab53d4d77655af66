// ncmdp: run experiments, invariant sweeps, single-episode oracle queries and
// plot-data reduction.

#include <cstdio>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ncmdp/checks.hpp"
#include "ncmdp/harness.hpp"
#include "ncmdp/oracle.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

int cmd_run(const std::string& path, std::uint64_t seed, bool print_config, bool quiet) {
  auto cfg = ncmdp::load_config(path);
  if (print_config) {
    const auto env = ncmdp::build_environment(cfg);
    nlohmann::json out = {{"name", cfg.name},           {"episodes", cfg.episodes},
                          {"seeds", cfg.seeds},         {"environment", cfg.environment},
                          {"env", env.meta},            {"values", cfg.values},
                          {"output", cfg.output.string()}, {"master_seed", seed},
                          {"resolved", ncmdp::resolve_parameters(cfg, env)}};
    std::cout << std::setw(2) << out << '\n';
    return kExitOk;
  }
  const auto result = ncmdp::run_experiment(cfg, seed);
  if (!quiet) std::cout << ncmdp::summary_table(result);
  std::cout << "wrote " << result.output.string() << '\n';
  return result.ok() ? kExitOk : kExitFailure;
}

int cmd_check(std::uint64_t seed, double bonus_scale) {
  ncmdp::CheckOptions opts;
  opts.seed = seed;
  opts.bonus_scale = bonus_scale;
  bool all = true;
  for (const auto& c : ncmdp::check_invariants(opts)) {
    std::printf("%-4s %-28s %7.2fs  seed=%llu  %s\n", c.passed ? "ok" : "FAIL", c.name.c_str(),
                c.seconds, static_cast<unsigned long long>(c.seed), c.detail.c_str());
    all = all && c.passed;
  }
  return all ? kExitOk : kExitFailure;
}

int cmd_oracle(const std::string& path, int k) {
  const auto cfg = ncmdp::load_config(path);
  const auto env = ncmdp::build_environment(cfg);
  if (k < 1 || k > env.cmdp.episodes())
    throw ncmdp::ConfigError("--episode: must lie in [1, " + std::to_string(env.cmdp.episodes()) + "]");
  const auto r = ncmdp::optimal_value(env.cmdp, k);
  nlohmann::json out = {{"episode", k},
                        {"feasible", r.feasible},
                        {"rho", env.cmdp.rho()},
                        {"optimal_value", r.optimal_value},
                        {"optimal_utility", r.optimal_utility},
                        {"dual_lambda", r.dual_lambda},
                        {"mixture_weight", r.weight},
                        {"iterations", r.iterations}};
  std::cout << std::setw(2) << out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-stationary constrained MDP laboratory"};
  app.require_subcommand(1);
  std::uint64_t seed = 20240601;
  app.add_option("--seed", seed, "Master seed; per-run streams derive from it")
      ->capture_default_str();

  auto* run = app.add_subcommand("run", "Run an experiment config");
  std::string run_cfg;
  bool print_config = false;
  bool quiet = false;
  run->add_option("config", run_cfg, "Config file (JSON)")->required();
  run->add_flag("--print-config", print_config, "Print resolved parameters and exit");
  run->add_flag("-q,--quiet", quiet, "Skip the summary table");

  auto* check = app.add_subcommand("check", "Run the invariant suites at small scale");
  double bonus_scale = 1.0;
  check->add_option("--bonus-scale", bonus_scale,
                    "Multiplier on the Q bonus in the boundedness suite (-1 flips its sign)");

  auto* oracle = app.add_subcommand("oracle", "Optimal value of one episode");
  std::string oracle_cfg;
  int episode = 1;
  oracle->add_option("config", oracle_cfg, "Config file (JSON)")->required();
  oracle->add_option("--episode,-k", episode, "Episode index (1-based)")->required();

  auto* pd = app.add_subcommand("plotdata", "Reduce a run directory to plotdata.csv");
  std::string rundir;
  pd->add_option("rundir", rundir, "Directory written by `run`")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_cfg, seed, print_config, quiet);
    if (*check) return cmd_check(seed, bonus_scale);
    if (*oracle) return cmd_oracle(oracle_cfg, episode);
    if (*pd) {
      std::cout << "wrote " << ncmdp::plotdata(rundir).string() << '\n';
      return kExitOk;
    }
  } catch (const ncmdp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

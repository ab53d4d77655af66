#pragma once

// Experiment orchestration: JSON configs, environment construction, cached
// oracle values, seeded runs executed concurrently, CSV and summary output.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ncmdp/cmdp.hpp"
#include "ncmdp/envs.hpp"
#include "ncmdp/linear.hpp"
#include "ncmdp/metrics.hpp"

namespace ncmdp {

inline constexpr const char* kCsvHeader =
    "k,return,utility,oracle_value,regret_cum,violation_cum,aux1,aux2";

struct ExperimentConfig {
  std::string name = "experiment";
  int episodes = 1000;
  std::vector<std::uint64_t> seeds{1};
  nlohmann::json environment;  // {"kind": ..., kind-specific keys}
  std::string algorithm;       // see kAlgorithms
  nlohmann::json overrides = nlohmann::json::object();
  /// "expected": exact value of the policy played in each episode (default);
  /// "realized": sampled returns.
  std::string values = "expected";
  std::filesystem::path output;
};

/// tripleq, double-restart, lsvi, lsvi-unknown, stationary-tripleq,
/// restart-q-unconstrained.
const std::vector<std::string>& algorithm_names();

/// Validates every field; throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Environment {
  NonstationaryCmdp cmdp;
  std::optional<FeatureMap> features;
  /// Exact variation budget, when it is cheap to know.
  std::optional<double> budget;
  std::uint64_t hash = 0;
  nlohmann::json meta;
};

Environment build_environment(const ExperimentConfig& cfg);

/// Per-(environment hash, k) memo of oracle values.
class OracleCache {
 public:
  /// Values for episodes 1..K, computing (in parallel) whatever is missing.
  std::vector<double> values(const Environment& env);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::uint64_t, int>, double> cache_;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> rows;
  MetricsSeries metrics{0.0};
  std::optional<double> slope;
  std::string error;
};

struct ExperimentResult {
  ExperimentConfig config;
  nlohmann::json resolved;
  std::vector<double> oracle;
  std::vector<RunRecord> runs;
  std::filesystem::path output;
  bool ok() const;
};

/// Every parameter of the chosen algorithm with defaults materialized.
nlohmann::json resolve_parameters(const ExperimentConfig& cfg, const Environment& env);

/// Runs all seeds (concurrently), writes run_<seed>.csv, aggregate.csv,
/// meta.json and summary.json when `write` is set. Run streams derive from
/// `master_seed` and each entry of cfg.seeds.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t master_seed,
                                bool write = true, OracleCache* cache = nullptr);

/// Episodes of one run of the configured algorithm.
std::vector<EpisodeRecord> run_algorithm(const ExperimentConfig& cfg, const Environment& env,
                                         Rng& rng);

void write_csv(const std::filesystem::path& path, const std::vector<EpisodeRecord>& rows,
               const MetricsSeries& metrics);

/// Column-wise mean of the per-run tables (identical k columns required).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);
void write_table(const std::filesystem::path& path, const CsvTable& table);

/// Reduced per-episode table for plotting: k, mean/min/max return and cost
/// across runs, cost = H - utility. Written to <rundir>/plotdata.csv.
std::filesystem::path plotdata(const std::filesystem::path& rundir);

/// Fixed-width summary table of a finished experiment.
std::string summary_table(const ExperimentResult& result);

/// Directory used when the config names none: $NCMDP_OUTPUT_DIR/<name> or
/// runs/<name>.
std::filesystem::path default_output_dir(const std::string& name);

}  // namespace ncmdp

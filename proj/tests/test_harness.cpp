#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ncmdp/harness.hpp"
#include "ncmdp/log.hpp"

using namespace ncmdp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct QuietWarnings {
  QuietWarnings() { set_warning_sink([](std::string_view) {}); }
  ~QuietWarnings() { set_warning_sink({}); }
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ncmdp_test_" + name);
  fs::remove_all(p);
  return p;
}

json drifting_config(const fs::path& out, int actions = 2) {
  return {{"name", "t"},
          {"episodes", 60},
          {"seeds", {1, 2, 3}},
          {"algorithm", "tripleq"},
          {"output", out.string()},
          {"environment",
           {{"kind", "drifting"},
            {"states", 3},
            {"actions", actions},
            {"horizon", 3},
            {"seed", 4},
            {"rho_fraction", 0.5},
            {"schedules", {{{"kind", "kernel_interpolation"}, {"budget", 0.5}}}}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("config validation names the field") {
  const auto base = drifting_config("x");
  auto j = base;
  j["seeds"] = json::array();
  CHECK(config_error(j).find("seeds") != std::string::npos);
  j = base;
  j["algorithm"] = "sarsa";
  CHECK(config_error(j).find("algorithm") != std::string::npos);
  j = base;
  j["overrides"] = {{"beta", 1.0}};
  CHECK(config_error(j).find("overrides.beta") != std::string::npos);
  j = base;
  j["overrides"] = {{"eta", "fast"}};
  CHECK(config_error(j).find("overrides.eta") != std::string::npos);
  j = base;
  j["episodes"] = 0;
  CHECK(config_error(j).find("episodes") != std::string::npos);
  j = base;
  j["colour"] = 1;
  CHECK(config_error(j).find("config.colour") != std::string::npos);
  j = base;
  j["environment"]["kind"] = "maze";
  CHECK(config_error(j).find("environment.kind") != std::string::npos);
  j = base;
  j["values"] = "sampled";
  CHECK(config_error(j).find("values") != std::string::npos);
  j = base;
  j["algorithm"] = "double-restart";
  j["overrides"] = {{"inner", {{"W", 3}}}};
  CHECK(config_error(j).find("overrides.inner.W") != std::string::npos);
  CHECK(config_error(base).empty());
}

TEST_CASE("environment fields are validated when built") {
  auto j = drifting_config("x");
  j["environment"]["wind"] = 3;
  const auto cfg = parse_config(j);
  CHECK_THROWS_WITH_AS(build_environment(cfg), doctest::Contains("environment.wind"), ConfigError);
  j = drifting_config("x");
  j["environment"]["schedules"][0]["kind"] = "teleport";
  CHECK_THROWS_AS(build_environment(parse_config(j)), ConfigError);
}

TEST_CASE("drifting environment meets its budget") {
  const auto env = build_environment(parse_config(drifting_config("x")));
  REQUIRE(env.budget.has_value());
  CHECK(*env.budget == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(variation_budgets(env.cmdp).total() == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(env.cmdp.rho() > 0.0);
  REQUIRE(env.cmdp.slater_delta().has_value());
  CHECK(*env.cmdp.slater_delta() == doctest::Approx(env.cmdp.rho()).epsilon(1e-12));
}

TEST_CASE("default output directory") {
  setenv("NCMDP_OUTPUT_DIR", "/tmp/somewhere", 1);
  CHECK(default_output_dir("abc") == fs::path("/tmp/somewhere/abc"));
  unsetenv("NCMDP_OUTPUT_DIR");
  CHECK(default_output_dir("abc") == fs::path("runs/abc"));
}

TEST_CASE("single-action environment has zero regret") {
  QuietWarnings quiet;
  const auto out = scratch("one_action");
  auto j = drifting_config(out, 1);
  j["seeds"] = {1};
  const auto res = run_experiment(parse_config(j), 9);
  REQUIRE(res.ok());
  const auto t = read_csv(out / "run_1.csv");
  REQUIRE(t.rows.size() == 60);
  for (const auto& r : t.rows) CHECK(std::abs(r[4]) < 1e-9);
}

TEST_CASE("experiment files") {
  QuietWarnings quiet;
  const auto out = scratch("files");
  const auto cfg = parse_config(drifting_config(out));
  OracleCache cache;
  const auto res = run_experiment(cfg, 5, true, &cache);
  REQUIRE(res.ok());
  CHECK(cache.size() == 60);

  std::vector<CsvTable> runs;
  for (int s : {1, 2, 3}) {
    runs.push_back(read_csv(out / ("run_" + std::to_string(s) + ".csv")));
    std::string header;
    for (std::size_t i = 0; i < runs.back().header.size(); ++i)
      header += (i ? "," : "") + runs.back().header[i];
    CHECK(header == kCsvHeader);
    REQUIRE(runs.back().rows.size() == 60);
    for (std::size_t i = 0; i < 60; ++i) CHECK(runs.back().rows[i][0] == static_cast<double>(i + 1));
  }
  const auto agg = read_csv(out / "aggregate.csv");
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t c = 1; c < 8; ++c) {
      const double mean = (runs[0].rows[i][c] + runs[1].rows[i][c] + runs[2].rows[i][c]) / 3.0;
      CHECK(std::abs(agg.rows[i][c] - mean) <= 1e-12 * (1.0 + std::abs(mean)));
    }
  // Running sums agree with the per-episode columns.
  double reg = 0.0, vio = 0.0;
  const double rho = res.resolved["rho"].get<double>();
  for (const auto& r : runs[0].rows) {
    reg += r[3] - r[1];
    vio += rho - r[2];
    CHECK(r[4] == doctest::Approx(reg).epsilon(1e-12));
    CHECK(r[5] == doctest::Approx(vio).epsilon(1e-12));
  }
  const auto meta = json::parse(slurp(out / "meta.json"));
  CHECK(meta["algorithm"] == "tripleq");
  CHECK(meta["horizon"] == 3);
  CHECK(meta["aux1"] == "Z");
  const auto summary = json::parse(slurp(out / "summary.json"));
  CHECK(summary.size() == 3);

  SUBCASE("identical reruns give identical bytes") {
    const auto again = scratch("files_again");
    auto j = drifting_config(again);
    run_experiment(parse_config(j), 5);
    for (int s : {1, 2, 3}) {
      const auto name = "run_" + std::to_string(s) + ".csv";
      CHECK(slurp(out / name) == slurp(again / name));
    }
    CHECK(slurp(out / "aggregate.csv") == slurp(again / "aggregate.csv"));
  }
  SUBCASE("plot data") {
    const auto p = plotdata(out);
    const auto t = read_csv(p);
    REQUIRE(t.rows.size() == 60);
    const double mean_u = (runs[0].rows[9][2] + runs[1].rows[9][2] + runs[2].rows[9][2]) / 3;
    CHECK(t.rows[9][2] == doctest::Approx(mean_u).epsilon(1e-12));
    CHECK(t.rows[9][3] == doctest::Approx(3 - mean_u).epsilon(1e-12));
    CHECK(t.rows[9][4] <= t.rows[9][1]);
    CHECK(t.rows[9][5] >= t.rows[9][1]);
  }
  SUBCASE("summary table lists every seed") {
    const auto s = summary_table(res);
    CHECK(s.find("regret") != std::string::npos);
    CHECK(std::count(s.begin(), s.end(), '\n') == 5);
  }
}

TEST_CASE("every algorithm runs") {
  QuietWarnings quiet;
  for (const auto& name : algorithm_names()) {
    CAPTURE(name);
    auto j = drifting_config(scratch("alg"));
    j["algorithm"] = name;
    j["seeds"] = {1};
    j["values"] = "expected";
    if (name == "lsvi-unknown") j["overrides"] = {{"variant", "outer-primal-dual"}};
    const auto cfg = parse_config(j);
    const auto env = build_environment(cfg);
    const auto resolved = resolve_parameters(cfg, env);
    CHECK(resolved["algorithm"] == name);
    const auto res = run_experiment(cfg, 3, false);
    REQUIRE(res.runs.size() == 1);
    CHECK(res.runs[0].error == "");
    CHECK(res.runs[0].rows.size() == 60);
  }
}

TEST_CASE("overrides reach the learner") {
  auto j = drifting_config("x");
  j["overrides"] = {{"eps", 0.01}, {"frame_len", 7}, {"budget", 3.0}};
  const auto cfg = parse_config(j);
  const auto r = resolve_parameters(cfg, build_environment(cfg));
  CHECK(r["params"]["eps"] == 0.01);
  CHECK(r["params"]["frame_len"] == 7);
  CHECK(r["budget"] == 3.0);
}

TEST_CASE("linear-synthetic environment") {
  json j = {{"name", "lin"},
            {"episodes", 40},
            {"seeds", {1}},
            {"algorithm", "lsvi"},
            {"output", scratch("lin").string()},
            {"environment",
             {{"kind", "linear-synthetic"},
              {"states", 4},
              {"actions", 2},
              {"dim", 3},
              {"horizon", 3},
              {"seed", 2},
              {"drift", 0.3}}}};
  const auto cfg = parse_config(j);
  const auto env = build_environment(cfg);
  REQUIRE(env.features.has_value());
  CHECK(env.features->dim() == 3);
  const auto r = resolve_parameters(cfg, env);
  CHECK(r["dim"] == 3);
  const auto res = run_experiment(cfg, 1, false);
  CHECK(res.ok());
}

TEST_CASE("grid world config") {
  json j = {{"name", "g"},
            {"episodes", 20},
            {"seeds", {1}},
            {"algorithm", "stationary-tripleq"},
            {"output", scratch("grid").string()},
            {"environment", {{"kind", "gridworld"}, {"horizon", 10}, {"cost_budget", 2}}}};
  const auto env = build_environment(parse_config(j));
  CHECK(env.cmdp.num_states() == 25);
  CHECK(env.cmdp.rho() == doctest::Approx(8.0));
  j["environment"]["obstacles"] = {{0, 0}};
  CHECK_THROWS_AS(build_environment(parse_config(j)), ConfigError);
}

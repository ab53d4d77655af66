#include "ncmdp/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "ncmdp/bob.hpp"
#include "ncmdp/log.hpp"
#include "ncmdp/oracle.hpp"
#include "ncmdp/tripleq.hpp"

namespace ncmdp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Field access with per-path error messages and unknown-key detection.

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where(key) + ": required field missing");
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  /// Rejects keys that were never looked up.
  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(where(key) + ": unknown field");
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<std::string> kTripleQKeys{"budget", "eta", "chi", "eps", "iota",
                                            "b_tilde", "frame_len", "bonus_scale"};
const std::vector<std::string> kTripleQInnerKeys{"eta", "chi", "eps", "iota",
                                                 "b_tilde", "frame_len", "bonus_scale"};
const std::vector<std::string> kLsviKeys{"budget", "delta", "p_fail", "ridge_lambda", "xi",
                                         "alpha", "eta", "beta", "frame_len", "backend"};
const std::vector<std::string> kLsviInnerKeys{"ridge_lambda", "xi", "alpha", "eta", "beta",
                                              "frame_len"};

bool is_tripleq_family(const std::string& a) {
  return a == "tripleq" || a == "stationary-tripleq" || a == "restart-q-unconstrained";
}

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(path + "." + key + ": not a parameter of this algorithm");
    const auto where = path + "." + key;
    if (key == "variant" || key == "backend") {
      if (!value.is_string()) throw ConfigError(where + ": expected a string");
    } else if (key == "candidates") {
      if (!value.is_array() || value.empty() ||
          !std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_number(); }))
        throw ConfigError(where + ": expected a nonempty list of numbers");
    } else if (key != "inner" && !value.is_number()) {
      throw ConfigError(where + ": expected a number");
    }
  }
}

void validate_overrides(const std::string& algorithm, const json& o) {
  const std::string path = "overrides";
  if (is_tripleq_family(algorithm)) {
    check_keys(o, kTripleQKeys, path);
  } else if (algorithm == "double-restart") {
    check_keys(o, {"W", "lambda_exp", "delta", "Delta", "candidates", "inner"}, path);
    if (o.contains("inner")) check_keys(o.at("inner"), kTripleQInnerKeys, path + ".inner");
  } else if (algorithm == "lsvi") {
    check_keys(o, kLsviKeys, path);
  } else if (algorithm == "lsvi-unknown") {
    check_keys(o, {"variant", "W", "lambda_exp", "delta", "Delta", "p_fail", "candidates",
                   "backend", "inner"},
               path);
    if (o.contains("inner")) check_keys(o.at("inner"), kLsviInnerKeys, path + ".inner");
  }
}

// ---------------------------------------------------------------------------
// Environments

Cell read_cell(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(where + ": expected [row, col]");
  return {j[0].get<int>(), j[1].get<int>()};
}

Environment build_gridworld_env(Fields& f, int K) {
  GridWorldConfig g;
  g.episodes = K;
  g.width = f.get("width", g.width);
  g.height = f.get("height", g.height);
  if (f.has("start")) g.start = read_cell(f.raw("start"), f.where("start"));
  if (f.has("goal")) g.goal = read_cell(f.raw("goal"), f.where("goal"));
  if (f.has("obstacles")) {
    const auto& arr = f.raw("obstacles");
    if (!arr.is_array()) throw ConfigError(f.where("obstacles") + ": expected a list of cells");
    g.obstacles.clear();
    for (const auto& c : arr) g.obstacles.push_back(read_cell(c, f.where("obstacles")));
  }
  g.horizon = f.get("horizon", g.horizon);
  g.slip0 = f.get("slip0", g.slip0);
  g.slip_drift = f.get("slip_drift", g.slip_drift);
  g.reward_drift = f.get("reward_drift", g.reward_drift);
  g.cost_drift = f.get("cost_drift", g.cost_drift);
  g.cost_budget = f.get("cost_budget", g.cost_budget);
  g.goal_resets = f.get("goal_resets", g.goal_resets);
  g.drift_seed = f.get<std::uint64_t>("drift_seed", g.drift_seed);
  f.finish();
  auto cmdp = build_gridworld(g);
  const auto r = g.resolved();
  json meta = {{"cost_budget", g.cost_budget},
               {"slip_drift", r.slip_drift},
               {"reward_drift", r.reward_drift},
               {"cost_drift", r.cost_drift},
               {"threshold_cost", g.cost_budget}};
  return {std::move(cmdp), std::nullopt, std::nullopt, 0, std::move(meta)};
}

DriftKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "reward_ramp") return DriftKind::RewardRamp;
  if (s == "utility_ramp") return DriftKind::UtilityRamp;
  if (s == "kernel_interpolation") return DriftKind::KernelInterpolation;
  if (s == "piecewise_switch") return DriftKind::PiecewiseSwitch;
  throw ConfigError(where + ": unknown schedule kind '" + s + "'");
}

// Threshold from a fraction of the smallest best-utility value over a few
// checkpoint episodes, with the Slater margin estimated on the same points.
std::pair<double, double> rho_from_fraction(const NonstationaryCmdp& cmdp, double fraction) {
  const int K = cmdp.episodes();
  std::vector<int> ks{1, std::max(1, K / 4), std::max(1, K / 2), std::max(1, 3 * K / 4), K};
  double umin = std::numeric_limits<double>::infinity();
  for (int k : ks) {
    const auto st = cmdp.episode(k);
    umin = std::min(umin, max_utility_policy(st, cmdp.mu0()).value.utility);
  }
  const double rho = fraction * umin;
  return {rho, umin - rho};
}

Environment build_drifting_env(Fields& f, int K) {
  const int S = f.require<int>("states");
  const int A = f.require<int>("actions");
  const int H = f.require<int>("horizon");
  const auto seed = f.get<std::uint64_t>("seed", 1);
  if (S < 1 || A < 1 || H < 1) throw ConfigError("environment: states/actions/horizon must be >= 1");
  Rng rng(seed);
  auto base = random_base(S, A, H, K, rng);
  std::vector<DriftSchedule> schedules;
  if (f.has("schedules")) {
    const auto& arr = f.raw("schedules");
    if (!arr.is_array()) throw ConfigError(f.where("schedules") + ": expected a list");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Fields sf(arr[i], f.where("schedules") + "[" + std::to_string(i) + "]");
      DriftSchedule sch;
      sch.kind = parse_kind(sf.require<std::string>("kind"), sf.where("kind"));
      sch.period = sf.get("period", 1);
      const bool by_budget = sf.has("budget");
      const double budget = sf.get("budget", 0.0);
      sch.magnitude = sf.get("magnitude", 0.0);
      if (by_budget && sf.has("magnitude"))
        throw ConfigError(sf.where("budget") + ": give either budget or magnitude");
      if (sf.has("sites") && sf.raw("sites").is_array()) {
        for (const auto& s : sf.raw("sites")) {
          if (!s.is_array() || s.size() != 3) throw ConfigError(sf.where("sites") + ": expected [x, a, h]");
          sch.affected.push_back({s[0].get<int>(), s[1].get<int>(), s[2].get<int>()});
        }
      } else {
        if (sf.has("sites") && sf.raw("sites") != "all")
          throw ConfigError(sf.where("sites") + ": expected \"all\" or a list");
        for (int h = 1; h <= H; ++h)
          for (int x = 0; x < S; ++x)
            for (int a = 0; a < A; ++a) sch.affected.push_back({x, a, h});
      }
      sf.finish();
      const bool kernel = sch.kind == DriftKind::KernelInterpolation ||
                          sch.kind == DriftKind::PiecewiseSwitch;
      if (kernel) {
        for (std::size_t s = 0; s < sch.affected.size(); ++s) {
          const auto p = random_simplex(S, rng);
          std::vector<KernelEntry> row;
          for (int n = 0; n < S; ++n) row.push_back({n, p[n]});
          sch.targets.push_back(std::move(row));
        }
      }
      if (by_budget && K > 1) {
        if (kernel) {
          // The closed form is linear in the magnitude: probe at unit weight.
          DriftSchedule probe = sch;
          probe.magnitude = sch.kind == DriftKind::KernelInterpolation ? 1.0 / (K - 1) : 1.0;
          Rng scratch(0);
          const auto unit = build_drifting(probe, base, scratch).expected.kernel;
          if (!(unit > 0.0)) throw ConfigError(sf.where("budget") + ": schedule cannot drift");
          sch.magnitude = probe.magnitude * budget / unit;
          if (sch.kind == DriftKind::PiecewiseSwitch && sch.magnitude > 1.0)
            throw ConfigError(sf.where("budget") + ": exceeds what the switch can produce");
        } else {
          std::set<int> steps;
          for (const auto& s : sch.affected) steps.insert(s.h);
          sch.magnitude = budget / ((K - 1) * static_cast<double>(steps.size()));
        }
      }
      schedules.push_back(std::move(sch));
    }
  }
  const bool has_rho = f.has("rho");
  const double rho = f.get("rho", 0.0);
  const double fraction = f.get("rho_fraction", 0.5);
  const bool has_delta = f.has("delta");
  const double delta = f.get("delta", 0.0);
  f.finish();
  auto model = build_drifting(schedules, base, rng);
  double r = rho, d = delta;
  if (!has_rho) {
    const auto [rr, dd] = rho_from_fraction(model.cmdp, fraction);
    r = rr;
    if (!has_delta) d = dd;
  }
  DriftBase final_base = std::move(base);
  final_base.rho = r;
  if (d > 0.0) final_base.slater_delta = d;
  Rng rebuild(seed);
  // Rebuild with the final threshold; schedules already carry their targets.
  auto final_model = build_drifting(schedules, std::move(final_base), rebuild);
  json meta = {{"budget_reward", final_model.expected.reward},
               {"budget_utility", final_model.expected.utility},
               {"budget_kernel", final_model.expected.kernel},
               {"budget", final_model.expected.total()},
               {"threshold_cost", H - r}};
  const double total = final_model.expected.total();
  return {std::move(final_model.cmdp), std::nullopt, total, 0, std::move(meta)};
}

Environment build_linear_env(Fields& f, int K) {
  const int S = f.require<int>("states");
  const int A = f.require<int>("actions");
  const int d = f.require<int>("dim");
  const int H = f.require<int>("horizon");
  const auto seed = f.get<std::uint64_t>("seed", 1);
  const double drift = f.get("drift", 0.2);
  const bool has_rho = f.has("rho");
  const double rho = f.get("rho", 0.0);
  const double fraction = f.get("rho_fraction", 0.5);
  const bool has_delta = f.has("delta");
  const double delta = f.get("delta", 0.0);
  f.finish();
  Rng rng(seed);
  auto truth = random_linear_cmdp(S, A, d, H, K, drift, rng);
  double r = rho, dd = delta;
  if (!has_rho) {
    const auto [rr, sl] = rho_from_fraction(build_linear_cmdp(truth), fraction);
    r = rr;
    if (!has_delta) dd = sl;
  }
  truth.rho = r;
  if (dd > 0.0) truth.slater_delta = dd;
  const auto pb = truth.parameter_budgets();
  json meta = {{"parameter_budget", pb.total()}, {"threshold_cost", H - r}};
  auto cmdp = build_linear_cmdp(truth);
  return {std::move(cmdp), truth.features, pb.total(), 0, std::move(meta)};
}

// ---------------------------------------------------------------------------
// Algorithm parameters

double env_budget(const Environment& env, const json& o) {
  if (o.contains("budget")) return o.at("budget").get<double>();
  if (env.budget) return *env.budget;
  return variation_budgets(env.cmdp).total();
}

void apply_tripleq(TripleQParams& p, const json& o) {
  if (o.contains("eta")) p.eta = o["eta"].get<double>();
  if (o.contains("chi")) p.chi = o["chi"].get<double>();
  if (o.contains("eps")) p.eps = o["eps"].get<double>();
  if (o.contains("iota")) p.iota = o["iota"].get<double>();
  if (o.contains("b_tilde")) p.b_tilde = o["b_tilde"].get<double>();
  if (o.contains("frame_len")) p.frame_len = o["frame_len"].get<int>();
  if (o.contains("bonus_scale")) p.bonus_scale = o["bonus_scale"].get<double>();
}

json tripleq_json(const TripleQParams& p) {
  return {{"alpha_exp", p.alpha_exp}, {"c_exp", p.c_exp},   {"eta", p.eta},
          {"chi", p.chi},             {"eps", p.eps},       {"iota", p.iota},
          {"b_tilde", p.b_tilde},     {"frame_len", p.frame_len},
          {"bonus_scale", p.bonus_scale}, {"use_queue", p.use_queue}};
}

TripleQParams tripleq_params(const ExperimentConfig& cfg, const Environment& env) {
  const auto& c = env.cmdp;
  const int K = c.episodes(), S = c.num_states(), A = c.num_actions(), H = c.horizon();
  TripleQParams p;
  if (cfg.algorithm == "stationary-tripleq") {
    p = stationary_params(K, S, A, H);
  } else {
    const double B = env_budget(env, cfg.overrides);
    p = cfg.algorithm == "tripleq" ? default_params(K, B, S, A, H)
                                   : unconstrained_params(K, B, S, A, H);
  }
  apply_tripleq(p, cfg.overrides);
  return p;
}

void apply_lsvi(LsviParams& p, const json& o) {
  if (o.contains("ridge_lambda")) p.ridge_lambda = o["ridge_lambda"].get<double>();
  if (o.contains("xi")) p.xi = o["xi"].get<double>();
  if (o.contains("alpha")) p.alpha = o["alpha"].get<double>();
  if (o.contains("eta")) p.eta = o["eta"].get<double>();
  if (o.contains("beta")) p.beta = o["beta"].get<double>();
  if (o.contains("frame_len")) p.frame_len = o["frame_len"].get<int>();
}

json lsvi_json(const LsviParams& p) {
  return {{"ridge_lambda", p.ridge_lambda}, {"xi", p.xi},       {"alpha", p.alpha},
          {"eta", p.eta},                   {"beta", p.beta},   {"frame_len", p.frame_len},
          {"p_fail", p.p_fail}};
}

double env_delta(const Environment& env, const json& o) {
  if (o.contains("delta")) return o.at("delta").get<double>();
  if (env.cmdp.slater_delta()) return *env.cmdp.slater_delta();
  throw ConfigError("overrides.delta: environment has no Slater margin; set it explicitly");
}

const FeatureMap& env_features(const Environment& env, std::optional<FeatureMap>& one_hot) {
  if (env.features) return *env.features;
  one_hot = FeatureMap::one_hot(env.cmdp.num_states(), env.cmdp.num_actions());
  return *one_hot;
}

LsviBackend parse_backend(const json& o) {
  const auto b = o.value("backend", std::string("features"));
  if (b == "features") return LsviBackend::Features;
  if (b == "counts") return LsviBackend::Counts;
  throw ConfigError("overrides.backend: expected \"features\" or \"counts\"");
}

LsviParams lsvi_params(const ExperimentConfig& cfg, const Environment& env, int d) {
  const auto& c = env.cmdp;
  const auto& o = cfg.overrides;
  auto p = lsvi_default_params(c.episodes(), env_budget(env, o), d, c.num_actions(), c.horizon(),
                               env_delta(env, o), o.value("p_fail", 0.01));
  apply_lsvi(p, o);
  return p;
}

DoubleRestartParams double_restart_params(const ExperimentConfig& cfg, const Environment& env) {
  const auto& o = cfg.overrides;
  DoubleRestartParams p;
  p.W = o.value("W", 0);
  p.lambda_exp = o.value("lambda_exp", p.lambda_exp);
  p.delta = o.contains("delta") ? o["delta"].get<double>() : env.cmdp.slater_delta().value_or(0.0);
  if (o.contains("Delta")) p.Delta = o["Delta"].get<double>();
  if (o.contains("candidates")) p.candidates = o["candidates"].get<std::vector<double>>();
  if (o.contains("inner")) {
    const json inner = o["inner"];
    p.tune = [inner](TripleQParams& t) { apply_tripleq(t, inner); };
  }
  return p;
}

LsviUnknownParams lsvi_unknown_params(const ExperimentConfig& cfg, const Environment& env) {
  const auto& o = cfg.overrides;
  LsviUnknownParams p;
  const auto variant = o.value("variant", std::string("exp3"));
  if (variant == "exp3")
    p.variant = UnknownBudgetVariant::Exp3;
  else if (variant == "outer-primal-dual")
    p.variant = UnknownBudgetVariant::OuterPrimalDual;
  else
    throw ConfigError("overrides.variant: expected \"exp3\" or \"outer-primal-dual\"");
  p.W = o.value("W", 0);
  p.lambda_exp = o.value("lambda_exp", p.lambda_exp);
  p.delta = env_delta(env, o);
  if (o.contains("Delta")) p.Delta = o["Delta"].get<double>();
  p.p_fail = o.value("p_fail", p.p_fail);
  if (o.contains("candidates")) p.candidates = o["candidates"].get<std::vector<double>>();
  p.backend = parse_backend(o);
  if (o.contains("inner")) {
    const json inner = o["inner"];
    p.tune = [inner](LsviParams& l) { apply_lsvi(l, inner); };
  }
  return p;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::pair<std::string, std::string> aux_names(const std::string& algorithm) {
  if (algorithm == "double-restart") return {"arm", "B_i"};
  if (algorithm == "lsvi") return {"Y", "frame"};
  if (algorithm == "lsvi-unknown") return {"Y", "arm"};
  return {"Z", "frame"};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

double quarter_mean(const std::vector<EpisodeRecord>& rows, bool last, bool utility) {
  const std::size_t n = rows.size();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t q = std::max<std::size_t>(1, n / 4);
  const std::size_t lo = last ? n - q : 0;
  double s = 0.0;
  for (std::size_t i = lo; i < lo + q; ++i)
    s += utility ? rows[i].realized_utility : rows[i].realized_return;
  return s / q;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& algorithm_names() {
  static const std::vector<std::string> names{"tripleq",      "double-restart",
                                              "lsvi",         "lsvi-unknown",
                                              "stationary-tripleq", "restart-q-unconstrained"};
  return names;
}

ExperimentConfig parse_config(const json& j) {
  Fields f(j, "config");
  ExperimentConfig cfg;
  cfg.name = f.get("name", cfg.name);
  cfg.episodes = f.get("episodes", cfg.episodes);
  if (cfg.episodes < 1) throw ConfigError("config.episodes: must be >= 1");
  cfg.seeds = f.get("seeds", cfg.seeds);
  if (cfg.seeds.empty()) throw ConfigError("config.seeds: must be nonempty");
  cfg.environment = f.require<json>("environment");
  if (!cfg.environment.is_object() || !cfg.environment.contains("kind"))
    throw ConfigError("config.environment.kind: required field missing");
  const auto kind = cfg.environment["kind"].get<std::string>();
  if (kind != "gridworld" && kind != "drifting" && kind != "linear-synthetic")
    throw ConfigError("config.environment.kind: expected gridworld, drifting or linear-synthetic");
  cfg.algorithm = f.require<std::string>("algorithm");
  const auto& names = algorithm_names();
  if (std::find(names.begin(), names.end(), cfg.algorithm) == names.end())
    throw ConfigError("config.algorithm: unknown algorithm '" + cfg.algorithm + "'");
  cfg.overrides = f.get("overrides", json::object());
  validate_overrides(cfg.algorithm, cfg.overrides);
  cfg.values = f.get("values", cfg.values);
  if (cfg.values != "realized" && cfg.values != "expected")
    throw ConfigError("config.values: expected \"realized\" or \"expected\"");
  cfg.output = f.has("output") ? fs::path(f.require<std::string>("output"))
                               : default_output_dir(cfg.name);
  f.finish();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

fs::path default_output_dir(const std::string& name) {
  const char* root = std::getenv("NCMDP_OUTPUT_DIR");
  return fs::path(root && *root ? root : "runs") / name;
}

Environment build_environment(const ExperimentConfig& cfg) {
  Fields f(cfg.environment, "environment");
  const auto kind = f.require<std::string>("kind");
  Environment env = kind == "gridworld" ? build_gridworld_env(f, cfg.episodes)
                    : kind == "drifting" ? build_drifting_env(f, cfg.episodes)
                                         : build_linear_env(f, cfg.episodes);
  json key = cfg.environment;
  key["episodes"] = cfg.episodes;
  env.hash = fnv1a(key.dump());
  env.meta["kind"] = kind;
  env.meta["horizon"] = env.cmdp.horizon();
  env.meta["rho"] = env.cmdp.rho();
  if (env.cmdp.slater_delta()) env.meta["slater_delta"] = *env.cmdp.slater_delta();
  return env;
}

std::vector<double> OracleCache::values(const Environment& env) {
  const int K = env.cmdp.episodes();
  std::vector<double> out(static_cast<std::size_t>(K));
  std::vector<int> missing;
  {
    std::lock_guard lock(mutex_);
    for (int k = 1; k <= K; ++k) {
      const auto it = cache_.find({env.hash, k});
      if (it == cache_.end())
        missing.push_back(k);
      else
        out[k - 1] = it->second;
    }
  }
  const int n = static_cast<int>(missing.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (int i = 0; i < n; ++i) {
    const int k = missing[i];
    const auto r = optimal_value(env.cmdp, k);
    out[k - 1] = r.feasible ? r.optimal_value : std::numeric_limits<double>::quiet_NaN();
  }
  std::lock_guard lock(mutex_);
  for (int k : missing) cache_[{env.hash, k}] = out[k - 1];
  return out;
}

std::size_t OracleCache::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

bool ExperimentResult::ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.error.empty(); });
}

json resolve_parameters(const ExperimentConfig& cfg, const Environment& env) {
  const auto& c = env.cmdp;
  json j = {{"algorithm", cfg.algorithm}, {"episodes", c.episodes()}, {"horizon", c.horizon()},
            {"states", c.num_states()},   {"actions", c.num_actions()}, {"rho", c.rho()}};
  if (is_tripleq_family(cfg.algorithm)) {
    if (cfg.algorithm != "stationary-tripleq") j["budget"] = env_budget(env, cfg.overrides);
    j["params"] = tripleq_json(tripleq_params(cfg, env));
    if (j["params"]["eps"].get<double>() > c.rho()) j["params"]["eps_clamped_to"] = c.rho();
  } else if (cfg.algorithm == "double-restart") {
    const auto p = double_restart_params(cfg, env);
    const int K = c.episodes();
    const int W = p.W > 0 ? std::min(p.W, K)
                          : std::min(K, static_cast<int>(std::ceil(std::pow(double(K), 5.0 / 9.0))));
    CandidateSet cs;
    if (!p.candidates.empty()) {
      cs.values = p.candidates;
      cs.J = static_cast<int>(cs.values.size()) - 1;
    } else if (p.Delta) {
      cs = tabular_candidates_with_delta(K, W, *p.Delta);
    } else if (p.delta > 0.0) {
      cs = tabular_candidates(K, W, c.num_states(), c.num_actions(), c.horizon(), p.delta);
    }
    j["W"] = W;
    j["J"] = cs.J;
    j["Delta"] = cs.Delta;
    j["candidates"] = cs.values;
    j["gamma0"] = exp3_gamma0(K, W, c.horizon());
    j["lambda_exp"] = p.lambda_exp;
    if (!cs.values.empty()) {
      auto first = inner_tripleq_params(K, W, cs.values.front(), c.num_states(), c.num_actions(), c.horizon());
      if (p.tune) p.tune(first);
      j["inner_params_arm0"] = tripleq_json(first);
    }
  } else if (cfg.algorithm == "lsvi") {
    std::optional<FeatureMap> oh;
    const auto& fm = env_features(env, oh);
    j["budget"] = env_budget(env, cfg.overrides);
    j["dim"] = fm.dim();
    j["backend"] = cfg.overrides.value("backend", std::string("features"));
    j["params"] = lsvi_json(lsvi_params(cfg, env, fm.dim()));
  } else if (cfg.algorithm == "lsvi-unknown") {
    std::optional<FeatureMap> oh;
    const auto& fm = env_features(env, oh);
    const auto p = lsvi_unknown_params(cfg, env);
    j["dim"] = fm.dim();
    j["variant"] = p.variant == UnknownBudgetVariant::Exp3 ? "exp3" : "outer-primal-dual";
    j["delta"] = p.delta;
    j["lambda_exp"] = p.lambda_exp;
    j["W_override"] = p.W;
  }
  return j;
}

std::vector<EpisodeRecord> run_algorithm(const ExperimentConfig& cfg, const Environment& env,
                                         Rng& rng) {
  const bool expected = cfg.values == "expected";
  std::vector<EpisodeRecord> rows;
  if (is_tripleq_family(cfg.algorithm)) {
    TripleQOptions opts;
    opts.evaluate_policy = expected;
    for (const auto& e : run_tripleq(env.cmdp, tripleq_params(cfg, env), rng, opts))
      rows.push_back({e.k, e.realized_return, e.realized_utility, e.expected_return,
                      e.expected_utility, e.Z, static_cast<double>(e.frame)});
  } else if (cfg.algorithm == "double-restart") {
    rows = run_double_restart(env.cmdp, double_restart_params(cfg, env), rng).run.episodes;
  } else if (cfg.algorithm == "lsvi") {
    std::optional<FeatureMap> oh;
    const auto& fm = env_features(env, oh);
    LsviOptions opts;
    opts.backend = parse_backend(cfg.overrides);
    opts.evaluate_policy = expected;
    opts.check_invariants = true;
    for (const auto& e : run_lsvi(env.cmdp, fm, lsvi_params(cfg, env, fm.dim()), rng, opts))
      rows.push_back({e.k, e.realized_return, e.realized_utility, e.expected_return,
                      e.expected_utility, e.Y, static_cast<double>(e.frame)});
  } else if (cfg.algorithm == "lsvi-unknown") {
    std::optional<FeatureMap> oh;
    const auto& fm = env_features(env, oh);
    rows = run_lsvi_unknown_budget(env.cmdp, fm, lsvi_unknown_params(cfg, env), rng).run.episodes;
  } else {
    throw ConfigError("config.algorithm: unknown algorithm '" + cfg.algorithm + "'");
  }
  if (expected) {
    for (auto& r : rows) {
      r.realized_return = r.expected_return;
      r.realized_utility = r.expected_utility;
    }
  }
  return rows;
}

void write_csv(const fs::path& path, const std::vector<EpisodeRecord>& rows,
               const MetricsSeries& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kCsvHeader << '\n';
  const auto& m = metrics.rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].k << ',' << fmt(rows[i].realized_return) << ',' << fmt(rows[i].realized_utility)
        << ',' << fmt(m[i].oracle_value) << ',' << fmt(m[i].regret_cum) << ','
        << fmt(m[i].violation_cum) << ',' << fmt(rows[i].aux1) << ',' << fmt(rows[i].aux2) << '\n';
  }
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(std::stod(cell));
    if (row.size() != t.header.size())
      throw std::runtime_error(path.string() + ": row width differs from header");
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_table(const fs::path& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < table.header.size(); ++i)
    out << (i ? "," : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "");
      // The episode column stays an integer.
      if (i == 0)
        out << static_cast<long long>(row[i]);
      else
        out << fmt(row[i]);
    }
    out << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t master_seed, bool write,
                                OracleCache* cache) {
  ExperimentResult res;
  res.config = cfg;
  res.output = cfg.output;
  const Environment env = build_environment(cfg);
  res.resolved = resolve_parameters(cfg, env);
  OracleCache local;
  res.oracle = (cache ? cache : &local)->values(env);
  if (std::any_of(res.oracle.begin(), res.oracle.end(), [](double v) { return std::isnan(v); }))
    warn("oracle: some episodes are infeasible; their regret entries are NaN");

  const int n = static_cast<int>(cfg.seeds.size());
  res.runs.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    auto& run = res.runs[i];
    run.seed = cfg.seeds[i];
    try {
      Rng rng = make_stream(master_seed, cfg.seeds[i]);
      run.rows = run_algorithm(cfg, env, rng);
      run.metrics = MetricsSeries(env.cmdp.rho());
      for (std::size_t t = 0; t < run.rows.size(); ++t)
        run.metrics.accumulate(run.rows[t].k, run.rows[t].realized_return,
                               run.rows[t].realized_utility, res.oracle[t]);
      try {
        run.slope = regret_slope(run.metrics, 0.5);
      } catch (const InsufficientData&) {
      }
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  }

  if (!write) return res;
  fs::create_directories(cfg.output);
  std::vector<const RunRecord*> good;
  for (const auto& run : res.runs) {
    if (!run.error.empty()) continue;
    write_csv(cfg.output / ("run_" + std::to_string(run.seed) + ".csv"), run.rows, run.metrics);
    good.push_back(&run);
  }
  if (!good.empty()) {
    CsvTable agg;
    std::stringstream hs(kCsvHeader);
    for (std::string c; std::getline(hs, c, ',');) agg.header.push_back(c);
    const std::size_t K = good.front()->rows.size();
    for (std::size_t t = 0; t < K; ++t) {
      std::vector<double> row(8, 0.0);
      row[0] = good.front()->rows[t].k;
      for (const auto* r : good) {
        const auto& e = r->rows[t];
        const auto& m = r->metrics.rows()[t];
        row[1] += e.realized_return;
        row[2] += e.realized_utility;
        row[3] += m.oracle_value;
        row[4] += m.regret_cum;
        row[5] += m.violation_cum;
        row[6] += e.aux1;
        row[7] += e.aux2;
      }
      for (std::size_t c = 1; c < row.size(); ++c) row[c] /= static_cast<double>(good.size());
      agg.rows.push_back(std::move(row));
    }
    write_table(cfg.output / "aggregate.csv", agg);
  }
  const auto [aux1, aux2] = aux_names(cfg.algorithm);
  json meta = {{"name", cfg.name},
               {"algorithm", cfg.algorithm},
               {"environment", cfg.environment},
               {"env", env.meta},
               {"env_hash", env.hash},
               {"episodes", cfg.episodes},
               {"seeds", cfg.seeds},
               {"master_seed", master_seed},
               {"values", cfg.values},
               {"horizon", env.cmdp.horizon()},
               {"rho", env.cmdp.rho()},
               {"cost_offset", env.cmdp.horizon()},
               {"aux1", aux1},
               {"aux2", aux2},
               {"resolved", res.resolved}};
  write_json(cfg.output / "meta.json", meta);
  json summary = json::array();
  for (const auto& run : res.runs) {
    json s = {{"seed", run.seed}};
    if (!run.error.empty()) {
      s["error"] = run.error;
    } else {
      s["regret"] = run.metrics.regret();
      s["violation"] = run.metrics.violation();
      s["slope"] = run.slope ? json(*run.slope) : json(nullptr);
      s["first_quarter_return"] = quarter_mean(run.rows, false, false);
      s["last_quarter_return"] = quarter_mean(run.rows, true, false);
      s["last_quarter_cost"] = env.cmdp.horizon() - quarter_mean(run.rows, true, true);
    }
    summary.push_back(std::move(s));
  }
  write_json(cfg.output / "summary.json", summary);
  return res;
}

fs::path plotdata(const fs::path& rundir) {
  std::ifstream in(rundir / "meta.json");
  if (!in) throw std::runtime_error("plotdata: " + (rundir / "meta.json").string() + " not found");
  const json meta = json::parse(in);
  const double H = meta.at("horizon").get<double>();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(rundir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("run_", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path());
  }
  if (files.empty()) throw std::runtime_error("plotdata: no run_*.csv files in " + rundir.string());
  std::sort(files.begin(), files.end());
  std::vector<CsvTable> tables;
  for (const auto& p : files) {
    tables.push_back(read_csv(p));
    std::stringstream hs(kCsvHeader);
    std::vector<std::string> want;
    for (std::string c; std::getline(hs, c, ',');) want.push_back(c);
    if (tables.back().header != want) throw std::runtime_error(p.string() + ": unexpected header");
    if (tables.back().rows.size() != tables.front().rows.size())
      throw std::runtime_error(p.string() + ": episode count differs between runs");
  }
  CsvTable out;
  out.header = {"k",          "mean_return", "mean_utility", "mean_cost",
                "min_return", "max_return",  "min_cost",     "max_cost"};
  const double n = static_cast<double>(tables.size());
  for (std::size_t t = 0; t < tables.front().rows.size(); ++t) {
    double sr = 0.0, su = 0.0;
    double rmin = std::numeric_limits<double>::infinity(), rmax = -rmin;
    double cmin = rmin, cmax = -rmin;
    for (const auto& tab : tables) {
      const double r = tab.rows[t][1], u = tab.rows[t][2], c = H - u;
      sr += r;
      su += u;
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
    out.rows.push_back({tables.front().rows[t][0], sr / n, su / n, H - su / n, rmin, rmax, cmin, cmax});
  }
  const auto path = rundir / "plotdata.csv";
  write_table(path, out);
  return path;
}

std::string summary_table(const ExperimentResult& result) {
  std::ostringstream out;
  const int H = result.resolved.value("horizon", 0);
  out << result.config.name << " (" << result.config.algorithm << ", K=" << result.config.episodes
      << ")\n";
  out << std::left << std::setw(8) << "seed" << std::right << std::setw(14) << "regret"
      << std::setw(14) << "violation" << std::setw(10) << "slope" << std::setw(14) << "ret Q1"
      << std::setw(14) << "ret Q4" << std::setw(14) << "cost Q4" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& run : result.runs) {
    out << std::left << std::setw(8) << run.seed << std::right;
    if (!run.error.empty()) {
      out << "  failed: " << run.error << '\n';
      continue;
    }
    out << std::setw(14) << run.metrics.regret() << std::setw(14) << run.metrics.violation()
        << std::setw(10);
    if (run.slope)
      out << *run.slope;
    else
      out << "n/a";
    out << std::setw(14) << quarter_mean(run.rows, false, false) << std::setw(14)
        << quarter_mean(run.rows, true, false) << std::setw(14)
        << H - quarter_mean(run.rows, true, true) << '\n';
  }
  return out.str();
}

}  // namespace ncmdp

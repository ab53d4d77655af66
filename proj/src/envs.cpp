#include "ncmdp/envs.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <string>

namespace ncmdp {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// ---------------------------------------------------------------------------
// Grid world source

// One random +-1 sign per (h, x, a) and episode transition, stored as bits with
// per-word prefix counts so that the cumulative walk at any episode is O(1).
class SignWalk {
 public:
  SignWalk(std::size_t sites, int transitions, Rng& rng)
      : words_per_site_((static_cast<std::size_t>(transitions) + 63) / 64),
        bits_(sites * words_per_site_, 0),
        prefix_(sites * words_per_site_, 0) {
    // Draw order: episode-major, so that the walk up to episode k depends only
    // on draws for episodes < k.
    for (int t = 0; t < transitions; ++t) {
      for (std::size_t s = 0; s < sites; ++s) {
        if (rng() >> 63) bits_[s * words_per_site_ + t / 64] |= (1ULL << (t % 64));
      }
    }
    for (std::size_t s = 0; s < sites; ++s) {
      std::uint32_t acc = 0;
      for (std::size_t w = 0; w < words_per_site_; ++w) {
        prefix_[s * words_per_site_ + w] = acc;
        acc += static_cast<std::uint32_t>(std::popcount(bits_[s * words_per_site_ + w]));
      }
    }
  }

  /// Sum of the first n signs of site s.
  long walk(std::size_t s, int n) const {
    if (n <= 0) return 0;
    const std::size_t w = static_cast<std::size_t>(n) / 64;
    const int rem = n % 64;
    long ones = 0;
    if (w < words_per_site_) {
      ones = prefix_[s * words_per_site_ + w];
      if (rem > 0)
        ones += std::popcount(bits_[s * words_per_site_ + w] & ((1ULL << rem) - 1));
    } else {
      const std::size_t last = words_per_site_ - 1;
      ones = prefix_[s * words_per_site_ + last] +
             std::popcount(bits_[s * words_per_site_ + last]);
    }
    return 2 * ones - n;
  }

 private:
  std::size_t words_per_site_;
  std::vector<std::uint64_t> bits_;
  std::vector<std::uint32_t> prefix_;
};

class GridWorldStages final : public StageSource {
 public:
  GridWorldStages(GridWorldConfig cfg, Rng& rng)
      : cfg_(std::move(cfg)),
        geo_(cfg_),
        walk_(static_cast<std::size_t>(cfg_.horizon) * geo_.num_states() * 4,
              std::max(0, cfg_.episodes - 1), rng) {}

  StageModel stage(int k, int h) const override {
    const int S = geo_.num_states();
    std::vector<std::vector<KernelEntry>> rows(static_cast<std::size_t>(S) * 4);
    std::vector<double> r(rows.size()), g(rows.size());
    for (int x = 0; x < S; ++x) {
      for (int a = 0; a < 4; ++a) {
        kernel_row(k, h, x, a, rows[x * 4 + a]);
        r[x * 4 + a] = reward(k, h, x, a);
        g[x * 4 + a] = utility(k, h, x, a);
      }
    }
    return StageModel(h, S, 4, std::move(rows), std::move(r), std::move(g));
  }

  double reward(int k, int h, int x, int a) const override {
    double base = geo_.shaping_reward(x);
    if (x == geo_.index(cfg_.goal)) base += kGoalReward;
    const auto site = (static_cast<std::size_t>(h - 1) * geo_.num_states() + x) * 4 + a;
    return clamp01(base + cfg_.reward_drift * static_cast<double>(walk_.walk(site, k - 1)));
  }

  double utility(int k, int, int x, int) const override {
    return 1.0 - gridworld_cost(cfg_, geo_, k, x);
  }

  void kernel_row(int k, int, int x, int a, std::vector<KernelEntry>& out) const override {
    out.clear();
    if (cfg_.goal_resets && x == geo_.index(cfg_.goal)) {
      out.push_back({geo_.index(cfg_.start), 1.0});
      return;
    }
    const double slip = cfg_.slip0 + (k - 1) * cfg_.slip_drift;
    for (int b = 0; b < 4; ++b) {
      const double p = (b == a ? 1.0 - slip : 0.0) + slip / 4.0;
      if (p <= 0.0) continue;
      const int n = geo_.move(x, b);
      auto it = std::find_if(out.begin(), out.end(),
                             [n](const KernelEntry& e) { return e.next == n; });
      if (it == out.end())
        out.push_back({n, p});
      else
        it->prob += p;
    }
    std::sort(out.begin(), out.end(),
              [](const KernelEntry& l, const KernelEntry& r) { return l.next < r.next; });
  }

 private:
  GridWorldConfig cfg_;
  GridGeometry geo_;
  SignWalk walk_;
};

// ---------------------------------------------------------------------------
// Drifting source

struct SiteIndex {
  int schedule = -1;
  int slot = -1;
};

class DriftingStages final : public StageSource {
 public:
  DriftingStages(std::vector<StageModel> base, std::vector<DriftSchedule> schedules,
                 int episodes)
      : base_(std::move(base)),
        schedules_(std::move(schedules)),
        K_(episodes),
        S_(base_.front().num_states()),
        A_(base_.front().num_actions()),
        reward_site_(site_count(), SiteIndex{}),
        utility_site_(site_count(), SiteIndex{}),
        kernel_site_(site_count(), SiteIndex{}) {
    for (int s = 0; s < static_cast<int>(schedules_.size()); ++s) {
      const auto& sch = schedules_[s];
      auto& table = sch.kind == DriftKind::RewardRamp    ? reward_site_
                    : sch.kind == DriftKind::UtilityRamp ? utility_site_
                                                          : kernel_site_;
      for (int i = 0; i < static_cast<int>(sch.affected.size()); ++i) {
        table[site(sch.affected[i])] = SiteIndex{s, i};
      }
    }
  }

  StageModel stage(int k, int h) const override {
    std::vector<std::vector<KernelEntry>> rows(static_cast<std::size_t>(S_) * A_);
    std::vector<double> r(rows.size()), g(rows.size());
    for (int x = 0; x < S_; ++x) {
      for (int a = 0; a < A_; ++a) {
        kernel_row(k, h, x, a, rows[x * A_ + a]);
        r[x * A_ + a] = reward(k, h, x, a);
        g[x * A_ + a] = utility(k, h, x, a);
      }
    }
    return StageModel(h, S_, A_, std::move(rows), std::move(r), std::move(g));
  }

  double reward(int k, int h, int x, int a) const override {
    return ramp(reward_site_, base_[h - 1].reward(x, a), k, h, x, a);
  }

  double utility(int k, int h, int x, int a) const override {
    return ramp(utility_site_, base_[h - 1].utility(x, a), k, h, x, a);
  }

  void kernel_row(int k, int h, int x, int a, std::vector<KernelEntry>& out) const override {
    const auto row = base_[h - 1].row(x, a);
    const SiteIndex si = kernel_site_[site({x, a, h})];
    if (si.schedule < 0) {
      out.assign(row.begin(), row.end());
      return;
    }
    const auto& sch = schedules_[si.schedule];
    double w = 0.0;
    if (sch.kind == DriftKind::KernelInterpolation) {
      w = (k - 1) * sch.magnitude;
    } else {
      w = ((k - 1) / sch.period) % 2 == 1 ? sch.magnitude : 0.0;
    }
    std::vector<double> dense(S_, 0.0);
    for (const auto& e : row) dense[e.next] += (1.0 - w) * e.prob;
    for (const auto& e : sch.targets[si.slot]) dense[e.next] += w * e.prob;
    out.clear();
    for (int n = 0; n < S_; ++n)
      if (dense[n] > 0.0) out.push_back({n, dense[n]});
  }

 private:
  std::size_t site_count() const { return static_cast<std::size_t>(base_.size()) * S_ * A_; }
  std::size_t site(const StepSite& s) const {
    return (static_cast<std::size_t>(s.h - 1) * S_ + s.x) * A_ + s.a;
  }

  double ramp(const std::vector<SiteIndex>& table, double base, int k, int h, int x,
              int a) const {
    const SiteIndex si = table[site({x, a, h})];
    if (si.schedule < 0) return base;
    return clamp01(base + (k - 1) * schedules_[si.schedule].magnitude);
  }

  std::vector<StageModel> base_;
  std::vector<DriftSchedule> schedules_;
  int K_;
  int S_;
  int A_;
  std::vector<SiteIndex> reward_site_;
  std::vector<SiteIndex> utility_site_;
  std::vector<SiteIndex> kernel_site_;
};

double row_l1(std::span<const KernelEntry> p, std::span<const KernelEntry> q, int S) {
  std::vector<double> dense(S, 0.0);
  for (const auto& e : p) dense[e.next] += e.prob;
  for (const auto& e : q) dense[e.next] -= e.prob;
  double d = 0.0;
  for (double v : dense) d += std::abs(v);
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------

GridWorldConfig GridWorldConfig::resolved() const {
  GridWorldConfig c = *this;
  const double step = 0.1 / episodes;
  if (c.slip_drift < 0.0) c.slip_drift = step;
  if (c.reward_drift < 0.0) c.reward_drift = step;
  if (c.cost_drift < 0.0) c.cost_drift = step;
  return c;
}

GridGeometry::GridGeometry(const GridWorldConfig& cfg)
    : width_(cfg.width), height_(cfg.height), goal_(cfg.goal) {
  check(width_ > 0 && height_ > 0, "gridworld: width and height must be positive");
  auto inside = [&](Cell c) { return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_; };
  check(inside(cfg.start), "gridworld: start outside the grid");
  check(inside(cfg.goal), "gridworld: goal outside the grid");
  check(!(cfg.start == cfg.goal), "gridworld: start and goal coincide");
  obstacle_.assign(num_states(), false);
  for (const auto& o : cfg.obstacles) {
    check(inside(o), "gridworld: obstacle outside the grid");
    check(!(o == cfg.start) && !(o == cfg.goal), "gridworld: obstacle on start or goal");
    obstacle_[index(o)] = true;
  }
  d_max_ = 0.0;
  for (int s = 0; s < num_states(); ++s) d_max_ = std::max(d_max_, goal_distance(s));
}

int GridGeometry::move(int s, int a) const {
  Cell c = cell(s);
  switch (static_cast<GridAction>(a)) {
    case GridAction::Up: c.row = std::max(0, c.row - 1); break;
    case GridAction::Down: c.row = std::min(height_ - 1, c.row + 1); break;
    case GridAction::Left: c.col = std::max(0, c.col - 1); break;
    case GridAction::Right: c.col = std::min(width_ - 1, c.col + 1); break;
  }
  return index(c);
}

double GridGeometry::goal_distance(int s) const {
  const Cell c = cell(s);
  return std::hypot(static_cast<double>(c.row - goal_.row), static_cast<double>(c.col - goal_.col));
}

double GridGeometry::shaping_reward(int s) const {
  return 0.1 * (d_max_ - goal_distance(s)) / d_max_;
}

double gridworld_cost(const GridWorldConfig& cfg, const GridGeometry& geo, int k, int s) {
  const double base = geo.is_obstacle(s) ? 1.0 : 0.0;
  return std::min(1.0, base + (k - 1) * cfg.cost_drift);
}

NonstationaryCmdp build_gridworld(const GridWorldConfig& raw) {
  const GridWorldConfig cfg = raw.resolved();
  check(cfg.episodes >= 1 && cfg.horizon >= 1, "gridworld: K and H must be positive");
  check(cfg.slip0 >= 0.0 && cfg.slip_drift >= 0.0 && cfg.reward_drift >= 0.0 &&
            cfg.cost_drift >= 0.0,
        "gridworld: slip and drifts must be nonnegative");
  check(cfg.slip0 + cfg.episodes * cfg.slip_drift <= 1.0,
        "gridworld: slip0 + K * slip_drift exceeds 1");
  check(cfg.cost_budget >= 0.0 && cfg.cost_budget <= cfg.horizon,
        "gridworld: cost budget must lie in [0, H]");
  GridGeometry geo(cfg);
  std::vector<double> mu0(geo.num_states(), 0.0);
  mu0[geo.index(cfg.start)] = 1.0;
  // Staying clear of obstacles costs only the drift, which bounds the margin.
  const double drift_cost = cfg.horizon * std::min(1.0, (cfg.episodes - 1) * cfg.cost_drift);
  std::optional<double> delta;
  if (cfg.cost_budget - drift_cost > 0.0) delta = cfg.cost_budget - drift_cost;
  Rng rng(cfg.drift_seed);
  auto source = std::make_shared<GridWorldStages>(cfg, rng);
  return NonstationaryCmdp(geo.num_states(), 4, cfg.horizon, cfg.episodes, std::move(mu0),
                           cfg.horizon - cfg.cost_budget, delta, std::move(source));
}

std::vector<double> random_simplex(int n, Rng& rng) {
  std::vector<double> v(n);
  double sum = 0.0;
  for (auto& x : v) {
    x = -std::log(1.0 - uniform01(rng));
    sum += x;
  }
  for (auto& x : v) x /= sum;
  return v;
}

DriftBase random_base(int num_states, int num_actions, int horizon, int episodes, Rng& rng) {
  DriftBase base;
  base.episodes = episodes;
  for (int h = 1; h <= horizon; ++h) {
    std::vector<double> kernel;
    kernel.reserve(static_cast<std::size_t>(num_states) * num_actions * num_states);
    std::vector<double> r, g;
    for (int i = 0; i < num_states * num_actions; ++i) {
      const auto row = random_simplex(num_states, rng);
      kernel.insert(kernel.end(), row.begin(), row.end());
      r.push_back(uniform01(rng));
      g.push_back(uniform01(rng));
    }
    base.stages.push_back(
        StageModel::from_dense(h, num_states, num_actions, kernel, std::move(r), std::move(g)));
  }
  base.mu0 = random_simplex(num_states, rng);
  return base;
}

DriftingCmdp build_drifting(std::span<const DriftSchedule> schedules_in, DriftBase base,
                            Rng& rng) {
  check(!base.stages.empty(), "drifting: base has no stages");
  check(base.episodes >= 1, "drifting: K must be positive");
  const int H = static_cast<int>(base.stages.size());
  const int S = base.stages.front().num_states();
  const int A = base.stages.front().num_actions();
  const int K = base.episodes;
  std::vector<DriftSchedule> schedules(schedules_in.begin(), schedules_in.end());

  bool used[3] = {false, false, false};
  VariationBudgets expected;
  for (auto& sch : schedules) {
    const int component = sch.kind == DriftKind::RewardRamp    ? 0
                          : sch.kind == DriftKind::UtilityRamp ? 1
                                                                : 2;
    check(!used[component], "drifting: two schedules drive the same component");
    used[component] = true;
    std::vector<bool> seen(static_cast<std::size_t>(H) * S * A, false);
    for (const auto& s : sch.affected) {
      check(s.h >= 1 && s.h <= H && s.x >= 0 && s.x < S && s.a >= 0 && s.a < A,
            "drifting: affected site outside the model");
      const auto idx = (static_cast<std::size_t>(s.h - 1) * S + s.x) * A + s.a;
      check(!seen[idx], "drifting: duplicate affected site");
      seen[idx] = true;
    }

    if (component < 2) {
      for (const auto& s : sch.affected) {
        const auto& st = base.stages[s.h - 1];
        const double v0 = component == 0 ? st.reward(s.x, s.a) : st.utility(s.x, s.a);
        const double v1 = v0 + (K - 1) * sch.magnitude;
        check(v1 >= 0.0 && v1 <= 1.0, "drifting: ramp leaves [0,1]");
      }
      std::vector<bool> step_hit(H, false);
      for (const auto& s : sch.affected) step_hit[s.h - 1] = true;
      const double per_step = (K - 1) * std::abs(sch.magnitude);
      double total = 0.0;
      for (bool hit : step_hit) total += hit ? per_step : 0.0;
      (component == 0 ? expected.reward : expected.utility) = total;
      continue;
    }

    if (sch.targets.empty()) {
      for (std::size_t i = 0; i < sch.affected.size(); ++i) {
        const auto p = random_simplex(S, rng);
        std::vector<KernelEntry> row;
        for (int n = 0; n < S; ++n) row.push_back({n, p[n]});
        sch.targets.push_back(std::move(row));
      }
    }
    check(sch.targets.size() == sch.affected.size(), "drifting: one target row per site");
    for (const auto& t : sch.targets) {
      double sum = 0.0;
      for (const auto& e : t) {
        check(e.next >= 0 && e.next < S && e.prob >= 0.0, "drifting: invalid target row");
        sum += e.prob;
      }
      check(std::abs(sum - 1.0) <= kProbTol, "drifting: target row off the simplex");
    }
    check(sch.magnitude >= 0.0, "drifting: kernel magnitude must be nonnegative");
    double weight = 0.0;
    if (sch.kind == DriftKind::KernelInterpolation) {
      check((K - 1) * sch.magnitude <= 1.0 + 1e-12,
            "drifting: interpolation runs past the target row");
      weight = (K - 1) * sch.magnitude;
    } else {
      check(sch.period >= 1, "drifting: switch period must be positive");
      check(sch.magnitude <= 1.0, "drifting: switch weight must lie in [0,1]");
      weight = ((K - 1) / sch.period) * sch.magnitude;
    }
    std::vector<double> max_l1(H, 0.0);
    for (std::size_t i = 0; i < sch.affected.size(); ++i) {
      const auto& s = sch.affected[i];
      max_l1[s.h - 1] = std::max(
          max_l1[s.h - 1], row_l1(base.stages[s.h - 1].row(s.x, s.a), sch.targets[i], S));
    }
    for (double m : max_l1) expected.kernel += weight * m;
  }

  auto source = std::make_shared<DriftingStages>(std::move(base.stages), std::move(schedules), K);
  NonstationaryCmdp cmdp(S, A, H, K, std::move(base.mu0), base.rho, base.slater_delta,
                         std::move(source));
  return {std::move(cmdp), expected};
}

DriftingCmdp build_drifting(const DriftSchedule& schedule, DriftBase base, Rng& rng) {
  return build_drifting(std::span<const DriftSchedule>(&schedule, 1), std::move(base), rng);
}

}  // namespace ncmdp

#include <cmath>

#include "doctest.h"
#include "ncmdp/cmdp.hpp"
#include "ncmdp/envs.hpp"

using namespace ncmdp;

TEST_CASE("grid geometry and shaping") {
  GridWorldConfig cfg;
  GridGeometry geo(cfg);
  const int goal = geo.index(cfg.goal);
  CHECK(geo.shaping_reward(goal) == doctest::Approx(0.1).epsilon(1e-15));
  // The corner opposite the goal is the farthest cell.
  CHECK(geo.shaping_reward(geo.index({0, 0})) == doctest::Approx(0.0));
  CHECK(geo.max_distance() == doctest::Approx(std::sqrt(32.0)));
  CHECK(geo.move(geo.index({0, 0}), static_cast<int>(GridAction::Up)) == geo.index({0, 0}));
  CHECK(geo.move(geo.index({2, 2}), static_cast<int>(GridAction::Right)) == geo.index({2, 3}));
  CHECK(geo.is_obstacle(geo.index({1, 1})));
  CHECK_FALSE(geo.is_obstacle(geo.index({2, 2})));
}

TEST_CASE("grid world model") {
  GridWorldConfig cfg;
  cfg.episodes = 1000;
  const auto cmdp = build_gridworld(cfg);
  GridGeometry geo(cfg);
  CHECK(cmdp.num_states() == 25);
  CHECK(cmdp.num_actions() == 4);
  CHECK(cmdp.horizon() == 30);
  CHECK(cmdp.rho() == doctest::Approx(25.0));

  SUBCASE("slip drifts linearly") {
    // Intended move keeps 1 - slip + slip/4 of the mass.
    const int c = geo.index({2, 2});
    const double slip_K = 0.05 + 999 * (0.1 / 1000);
    CHECK(slip_K == doctest::Approx(0.1499));
    const auto last = cmdp.stage(1000, 1);
    CHECK(last.prob(c, 0, geo.index({1, 2})) == doctest::Approx(1.0 - slip_K + slip_K / 4));
    const auto first = cmdp.stage(1, 1);
    CHECK(first.prob(c, 0, geo.index({1, 2})) == doctest::Approx(1.0 - 0.05 + 0.05 / 4));
  }
  SUBCASE("goal step resets to the start") {
    const auto st = cmdp.stage(5, 3);
    for (int a = 0; a < 4; ++a) CHECK(st.prob(geo.index(cfg.goal), a, geo.index(cfg.start)) == 1.0);
    // Goal reward plus shaping, clipped to the unit interval.
    CHECK(cmdp.stage(1, 1).reward(geo.index(cfg.goal), 0) == doctest::Approx(1.0));
  }
  SUBCASE("obstacle cost and drift") {
    const auto s1 = cmdp.stage(1, 1);
    CHECK(s1.utility(geo.index({1, 1}), 0) == 0.0);
    CHECK(s1.utility(geo.index({2, 2}), 0) == 1.0);
    const auto sK = cmdp.stage(1000, 1);
    CHECK(1.0 - sK.utility(geo.index({2, 2}), 0) == doctest::Approx(999 * 1e-4));
    CHECK(gridworld_cost(cfg.resolved(), geo, 1000, geo.index({2, 2})) ==
          doctest::Approx(999 * 1e-4));
  }
  SUBCASE("Slater margin") {
    REQUIRE(cmdp.slater_delta().has_value());
    CHECK(*cmdp.slater_delta() == doctest::Approx(5.0 - 30 * 999 * 1e-4));
  }
  SUBCASE("rewards move by at most the drift per episode") {
    const auto b = variation_budgets(cmdp, 1, 50);
    CHECK(b.reward <= 49 * 30 * 1e-4 + 1e-12);
  }
}

TEST_CASE("grid world validation") {
  GridWorldConfig cfg;
  cfg.obstacles = {{4, 4}};
  CHECK_THROWS_AS(build_gridworld(cfg), ConfigError);
  cfg = {};
  cfg.cost_budget = 40;
  CHECK_THROWS_AS(build_gridworld(cfg), ConfigError);
  cfg = {};
  cfg.start = {7, 0};
  CHECK_THROWS_AS(build_gridworld(cfg), ConfigError);
}

namespace {

DriftSchedule all_sites(DriftKind kind, int S, int A, int H, double magnitude) {
  DriftSchedule s;
  s.kind = kind;
  s.magnitude = magnitude;
  for (int h = 1; h <= H; ++h)
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) s.affected.push_back({x, a, h});
  return s;
}

}  // namespace

TEST_CASE("drift schedules") {
  Rng rng(11);
  const int S = 3, A = 2, H = 2, K = 40;

  SUBCASE("zero magnitude") {
    auto base = random_base(S, A, H, K, rng);
    const auto m = build_drifting(all_sites(DriftKind::KernelInterpolation, S, A, H, 0.0), base, rng);
    const auto b = variation_budgets(m.cmdp);
    CHECK(m.expected.total() == 0.0);
    CHECK(b.total() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("reward ramp on one site") {
    auto base = random_base(S, A, H, K, rng);
    // Keep the ramp inside [0, 1].
    auto& st = base.stages[0];
    std::vector<double> r(st.rewards().begin(), st.rewards().end());
    r[0] = 0.1;
    std::vector<std::vector<KernelEntry>> rows;
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) rows.emplace_back(st.row(x, a).begin(), st.row(x, a).end());
    st = StageModel(1, S, A, rows, r, std::vector<double>(st.utilities().begin(), st.utilities().end()));
    DriftSchedule s;
    s.kind = DriftKind::RewardRamp;
    s.magnitude = 0.01;
    s.affected = {{0, 0, 1}};
    const auto m = build_drifting(s, base, rng);
    CHECK(m.expected.reward == doctest::Approx((K - 1) * 0.01));
    CHECK(variation_budgets(m.cmdp).reward == doctest::Approx((K - 1) * 0.01).epsilon(1e-9));
    CHECK(m.cmdp.stage(K, 1).reward(0, 0) == doctest::Approx(0.1 + (K - 1) * 0.01));
  }
  SUBCASE("kernel interpolation matches measurement") {
    auto base = random_base(S, A, H, K, rng);
    const auto m = build_drifting(all_sites(DriftKind::KernelInterpolation, S, A, H, 1.0 / K), base, rng);
    const auto b = variation_budgets(m.cmdp);
    CHECK(m.expected.kernel > 0.0);
    CHECK(std::abs(b.kernel - m.expected.kernel) < 1e-9);
    CHECK(b.reward == 0.0);
  }
  SUBCASE("piecewise switch matches measurement") {
    auto base = random_base(S, A, H, K, rng);
    auto s = all_sites(DriftKind::PiecewiseSwitch, S, A, H, 0.5);
    s.period = 7;
    const auto m = build_drifting(s, base, rng);
    CHECK(std::abs(variation_budgets(m.cmdp).kernel - m.expected.kernel) < 1e-9);
  }
  SUBCASE("ramp leaving [0,1] is rejected") {
    auto base = random_base(S, A, H, K, rng);
    CHECK_THROWS(build_drifting(all_sites(DriftKind::UtilityRamp, S, A, H, 0.1), base, rng));
  }
}

TEST_CASE("random_simplex") {
  Rng rng(12);
  for (int n : {1, 2, 7}) {
    const auto p = random_simplex(n, rng);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

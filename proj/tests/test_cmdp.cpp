#include <cmath>

#include "doctest.h"
#include "ncmdp/cmdp.hpp"
#include "ncmdp/envs.hpp"

using namespace ncmdp;

namespace {

// One-stage model per (k, h) from dense arrays.
StageModel dense(int h, int S, int A, std::vector<double> kernel, std::vector<double> r,
                 std::vector<double> g) {
  return StageModel::from_dense(h, S, A, kernel, std::move(r), std::move(g));
}

NonstationaryCmdp single_episode(std::vector<StageModel> stages, std::vector<double> mu0) {
  return NonstationaryCmdp::materialized({std::move(stages)}, std::move(mu0), 0.0);
}

}  // namespace

TEST_CASE("sample_initial follows mu0") {
  const int S = 4;
  std::vector<double> k(S * S, 0.0);
  for (int x = 0; x < S; ++x) k[x * S + x] = 1.0;
  const auto st = dense(1, S, 1, k, std::vector<double>(S, 0.0), std::vector<double>(S, 0.0));

  SUBCASE("one-hot") {
    const auto c = single_episode({st}, {0, 0, 0, 1});
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) CHECK(sample_initial(c, rng) == 3);
  }
  SUBCASE("uniform over two states") {
    const auto c = single_episode({st}, {0.5, 0.5, 0, 0});
    Rng rng(2);
    const int n = 1000000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += sample_initial(c, rng) == 0;
    const double sigma = std::sqrt(n * 0.25);
    CHECK(std::abs(hits - 0.5 * n) < 3 * sigma);
  }
  SUBCASE("skewed") {
    const auto c = single_episode({st}, {0.9, 0.1, 0, 0});
    Rng rng(3);
    const int n = 1000000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += sample_initial(c, rng) == 0;
    const double f = static_cast<double>(hits) / n;
    CHECK(f >= 0.897);
    CHECK(f <= 0.903);
  }
}

TEST_CASE("step") {
  SUBCASE("deterministic kernel and reward") {
    const auto st = dense(1, 2, 1, {0, 1, 0, 1}, {0.7, 0.2}, {0.1, 0.3});
    const auto c = single_episode({st}, {1, 0});
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      const auto r = step(c, 1, 1, 0, 0, rng);
      CHECK(r.reward == 0.7);
      CHECK(r.utility == 0.1);
      CHECK(r.next_state == kTerminal);  // H = 1
    }
  }
  SUBCASE("next state inside the horizon") {
    const auto s1 = dense(1, 2, 1, {0, 1, 0, 1}, {0.7, 0.2}, {0, 0});
    const auto s2 = dense(2, 2, 1, {0, 1, 0, 1}, {0.7, 0.2}, {0, 0});
    const auto c = single_episode({s1, s2}, {1, 0});
    Rng rng(5);
    for (int i = 0; i < 100; ++i) CHECK(step(c, 1, 1, 0, 0, rng).next_state == 1);
  }
  SUBCASE("balanced row") {
    const auto s1 = dense(1, 2, 1, {0.5, 0.5, 0.5, 0.5}, {0, 0}, {0, 0});
    const auto s2 = dense(2, 2, 1, {0.5, 0.5, 0.5, 0.5}, {0, 0}, {0, 0});
    const auto c = single_episode({s1, s2}, {1, 0});
    Rng rng(6);
    const int n = 1000000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += step(c, 1, 1, 0, 0, rng).next_state == 0;
    CHECK(std::abs(zeros - 0.5 * n) < 3 * std::sqrt(0.25 * n));
  }
  SUBCASE("bounds are checked") {
    const auto st = dense(1, 2, 1, {0, 1, 0, 1}, {0.7, 0.2}, {0.1, 0.3});
    const auto c = single_episode({st}, {1, 0});
    Rng rng(7);
    CHECK_THROWS(step(c, 2, 1, 0, 0, rng));
    CHECK_THROWS(step(c, 1, 2, 0, 0, rng));
    CHECK_THROWS(step(c, 1, 1, 5, 0, rng));
  }
}

TEST_CASE("malformed models are rejected") {
  CHECK_THROWS_AS(dense(1, 2, 1, {0.6, 0.6, 0, 1}, {0, 0}, {0, 0}), ModelError);
  CHECK_THROWS_AS(dense(1, 2, 1, {0, 1, 0, 1}, {1.5, 0}, {0, 0}), ModelError);
  CHECK_THROWS_AS(dense(1, 2, 1, {0, 1, 0, 1}, {0, 0}, {-0.1, 0}), ModelError);
  CHECK_THROWS_AS(StochasticPolicy(1, 1, 2, {0.3, 0.3}), ModelError);
}

TEST_CASE("policy_value") {
  SUBCASE("H=1 deterministic") {
    const auto st = dense(1, 1, 1, {1}, {0.7}, {0.2});
    const auto c = single_episode({st}, {1});
    const auto v = policy_value(c, 1, StochasticPolicy::uniform(1, 1, 1));
    CHECK(v.reward == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(v.utility == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("uniform over two actions") {
    const auto st = dense(1, 1, 2, {1, 1}, {0, 1}, {0, 0});
    const auto c = single_episode({st}, {1});
    CHECK(policy_value(c, 1, StochasticPolicy::uniform(1, 1, 2)).reward == doctest::Approx(0.5));
  }
  SUBCASE("matches Monte-Carlo on a random model") {
    Rng gen(8);
    auto base = random_base(3, 2, 3, 1, gen);
    const auto c = NonstationaryCmdp::materialized({base.stages}, base.mu0, 0.0);
    std::vector<double> probs;
    for (int i = 0; i < 3 * 3; ++i) {
      const double p = uniform01(gen);
      probs.push_back(p);
      probs.push_back(1.0 - p);
    }
    const StochasticPolicy pi(3, 3, 2, probs);
    const auto exact = policy_value(c, 1, pi);
    Rng rng(9);
    const int n = 1000000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = rollout(c, 1, pi, rng).total_return;
      sum += r;
      sq += r * r;
    }
    const double mean = sum / n;
    const double sd = std::sqrt((sq / n - mean * mean) / n);
    CHECK(std::abs(mean - exact.reward) < 3 * sd);
  }
}

TEST_CASE("policy_value through the source matches the materialized episode") {
  GridWorldConfig cfg;
  cfg.episodes = 50;
  cfg.horizon = 6;
  const auto c = build_gridworld(cfg);
  Rng rng(8);
  std::vector<int> actions(6 * 25);
  for (auto& a : actions) a = static_cast<int>(uniform01(rng) * 4);
  for (const auto& pi : {StochasticPolicy::uniform(6, 25, 4),
                         StochasticPolicy::deterministic(6, 25, 4, actions)})
    for (int k : {1, 17, 50}) {
      const auto a = policy_value(c, k, pi);
      const auto b = policy_value(c.episode(k), c.mu0(), pi);
      CHECK(a.reward == doctest::Approx(b.reward).epsilon(1e-14));
      CHECK(a.utility == doctest::Approx(b.utility).epsilon(1e-14));
    }
}

TEST_CASE("variation_budgets") {
  const auto a = dense(1, 2, 1, {1, 0, 0, 1}, {0.2, 0.4}, {0.5, 0.5});
  SUBCASE("stationary") {
    const auto c = NonstationaryCmdp::materialized({{a}, {a}, {a}}, {1, 0}, 0.0);
    const auto b = variation_budgets(c);
    CHECK(b.reward == 0.0);
    CHECK(b.utility == 0.0);
    CHECK(b.kernel == 0.0);
  }
  SUBCASE("one reward entry moves by 0.3") {
    const auto b2 = dense(1, 2, 1, {1, 0, 0, 1}, {0.5, 0.4}, {0.5, 0.5});
    const auto c = NonstationaryCmdp::materialized({{a}, {b2}}, {1, 0}, 0.0);
    const auto b = variation_budgets(c);
    CHECK(b.reward == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(b.utility == 0.0);
    CHECK(b.kernel == 0.0);
  }
  SUBCASE("kernel row flips once") {
    const auto b2 = dense(1, 2, 1, {0, 1, 0, 1}, {0.2, 0.4}, {0.5, 0.5});
    const auto c = NonstationaryCmdp::materialized({{a}, {b2}, {b2}}, {1, 0}, 0.0);
    CHECK(variation_budgets(c).kernel == doctest::Approx(2.0));
    CHECK(variation_budgets(c, 2, 3).kernel == 0.0);
  }
}

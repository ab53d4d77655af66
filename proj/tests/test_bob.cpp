#include <cmath>

#include "doctest.h"
#include "ncmdp/bob.hpp"
#include "ncmdp/checks.hpp"
#include "ncmdp/envs.hpp"
#include "ncmdp/log.hpp"
#include "ncmdp/oracle.hpp"

using namespace ncmdp;

namespace {

struct QuietWarnings {
  QuietWarnings() { set_warning_sink([](std::string_view) {}); }
  ~QuietWarnings() { set_warning_sink({}); }
};

NonstationaryCmdp drifting(int K, Rng& rng) {
  auto base = random_base(3, 2, 3, K, rng);
  base.rho = 0.5 * max_utility_policy(base.stages, base.mu0).value.utility;
  base.slater_delta = base.rho;
  DriftSchedule s;
  s.kind = DriftKind::KernelInterpolation;
  s.magnitude = 0.5 / (K - 1);
  for (int h = 1; h <= 3; ++h)
    for (int x = 0; x < 3; ++x)
      for (int a = 0; a < 2; ++a) s.affected.push_back({x, a, h});
  return build_drifting(s, std::move(base), rng).cmdp;
}

}  // namespace

TEST_CASE("bandit over bandit bookkeeping") {
  Rng rng(51);
  const int K = 103, W = 10;
  EpochRunner runner = [](int arm, int first, int length, Rng&) {
    EpochResult r;
    for (int k = first; k < first + length; ++k) {
      r.episodes.push_back({k, 1.0 * arm, 1.0, 0, 0, 0, 0});
      r.R += arm;
      r.G += 1.0;
    }
    return r;
  };
  std::vector<int> lengths;
  EpochShaper shaper = [&](const EpochResult&, int length) {
    lengths.push_back(length);
    return 0.5;
  };
  const auto run = run_bandit_over_bandit(K, W, 3, 0.2, runner, shaper, rng);
  CHECK(run.episodes.size() == static_cast<std::size_t>(K));
  CHECK(run.epochs.size() == 11);
  CHECK(lengths.back() == 3);  // the short last epoch
  for (std::size_t i = 0; i < run.episodes.size(); ++i) CHECK(run.episodes[i].k == static_cast<int>(i) + 1);
  for (const auto& e : run.epochs) {
    double s = 0.0;
    for (double p : e.probs) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.rhat == doctest::Approx(e.payoff / e.p_drawn));
  }
  double s = 0.0;
  for (double p : run.final_probs) s += p;
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("single candidate equals plain restarts") {
  QuietWarnings quiet;
  const int K = 400;
  Rng gen(52);
  const auto cmdp = drifting(K, gen);
  DoubleRestartParams p;
  p.candidates = {1.7};
  p.W = 37;
  Rng a(53);
  const auto run = run_double_restart(cmdp, p, a);
  REQUIRE(run.run.episodes.size() == static_cast<std::size_t>(K));

  Rng b(53);
  std::vector<TripleQEpisode> plain;
  for (int first = 1; first <= K; first += p.W) {
    const int len = std::min(p.W, K - first + 1);
    TripleQOptions opts;
    opts.first_episode = first;
    opts.num_episodes = len;
    const auto part = run_tripleq(cmdp, inner_tripleq_params(K, len, 1.7, 3, 2, 3), b, opts);
    plain.insert(plain.end(), part.begin(), part.end());
  }
  REQUIRE(plain.size() == run.run.episodes.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(run.run.episodes[i].realized_return == plain[i].realized_return);
    CHECK(run.run.episodes[i].realized_utility == plain[i].realized_utility);
    CHECK(run.run.episodes[i].aux2 == 1.7);
  }
}

TEST_CASE("inner parameters use the full horizon for the drift bonus") {
  const auto p = inner_tripleq_params(10000, 100, 2.0, 3, 2, 4);
  const auto q = default_params(100, 2.0, 3, 2, 4);
  CHECK(p.eta == q.eta);
  CHECK(p.frame_len == q.frame_len);
  CHECK(p.b_tilde == doctest::Approx(std::pow(2.0, 1.0 / 3.0) * std::pow(10000.0, -0.4)));
}

TEST_CASE("double restart defaults") {
  QuietWarnings quiet;
  const int K = 600;
  Rng gen(54);
  const auto cmdp = drifting(K, gen);
  Rng rng(55);
  const auto run = run_double_restart(cmdp, {}, rng);
  CHECK(run.W == static_cast<int>(std::ceil(std::pow(600.0, 5.0 / 9.0))));
  CHECK(run.candidates.J == arm_count_exponent(run.W));
  CHECK(run.run.episodes.size() == 600);
  for (const auto& e : run.run.epochs) CHECK(e.payoff >= 0.0);
}

TEST_CASE("exp3 suites") {
  CHECK(check_exp3_invariants(10000, 56).passed);
  CHECK(check_exp3_estimator(57).passed);
  CHECK(check_exp3_better_arm(20, 58).passed);
}

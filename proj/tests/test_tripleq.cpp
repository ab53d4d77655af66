#include <cmath>

#include "doctest.h"
#include "ncmdp/envs.hpp"
#include "ncmdp/log.hpp"
#include "ncmdp/oracle.hpp"
#include "ncmdp/tripleq.hpp"

using namespace ncmdp;

namespace {

struct QuietWarnings {
  QuietWarnings() { set_warning_sink([](std::string_view) {}); }
  ~QuietWarnings() { set_warning_sink({}); }
};

// Drifting random model with rho at a fraction of the first episode's best utility.
DriftingCmdp small_model(int S, int A, int H, int K, double weight, double fraction, Rng& rng) {
  auto base = random_base(S, A, H, K, rng);
  base.rho = fraction * max_utility_policy(base.stages, base.mu0).value.utility;
  DriftSchedule s;
  s.kind = DriftKind::KernelInterpolation;
  s.magnitude = K > 1 ? weight / (K - 1) : 0.0;
  for (int h = 1; h <= H; ++h)
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) s.affected.push_back({x, a, h});
  return build_drifting(s, std::move(base), rng);
}

}  // namespace

TEST_CASE("default parameters") {
  const auto p = default_params(100000, 1.0, 1, 1, 1);
  CHECK(p.alpha_exp == 0.6);
  CHECK(p.c_exp == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p.eta == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(p.chi == doctest::Approx(10.0).epsilon(1e-12));
  // 128 ln(sqrt(2) * 100), evaluated independently in high precision.
  CHECK(default_params(100, 1.0, 1, 1, 1).iota == doctest::Approx(633.8232).epsilon(1e-7));
  // K^0.6 = 1000 for K = 1e5: frames of 1000 episodes with B = 1, 250 with B = 8.
  CHECK(p.frame_len == 1000);
  CHECK(default_params(100000, 8.0, 1, 1, 1).frame_len == 250);
  CHECK(p.b_tilde == doctest::Approx(std::pow(1e5, -0.4)));
  // B <= 0 behaves like B = 1; frames never exceed the run.
  CHECK(default_params(1000, 0.0, 2, 2, 2).eta == default_params(1000, 1.0, 2, 2, 2).eta);
  CHECK(default_params(10, 1e-9, 2, 2, 2).frame_len == 10);
  CHECK_THROWS(default_params(0, 1.0, 1, 1, 1));
}

TEST_CASE("baseline parameters") {
  const auto s = stationary_params(5000, 3, 2, 4);
  CHECK(s.frame_len == 5000);
  CHECK(s.b_tilde == 0.0);
  CHECK(s.use_queue);
  const auto u = unconstrained_params(5000, 2.0, 3, 2, 4);
  CHECK_FALSE(u.use_queue);
  CHECK(u.frame_len == default_params(5000, 2.0, 3, 2, 4).frame_len);
}

TEST_CASE("learning rate and bonus") {
  CHECK(learning_rate(1, 1.0) == 1.0);
  CHECK(learning_rate(6, 4.0) == 0.5);
  CHECK(learning_rate(3, 2.0) > learning_rate(4, 2.0));
  CHECK_THROWS(learning_rate(0, 1.0));
  CHECK(hoeffding_bonus(1, 1.0, 1, 4.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(hoeffding_bonus(1, 0.0, 2, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  double prev = hoeffding_bonus(1, 3.0, 5, 10.0);
  for (int t = 2; t < 100000; t *= 3) {
    const double b = hoeffding_bonus(t, 3.0, 5, 10.0);
    CHECK(b < prev);
    prev = b;
  }
  CHECK(prev < 0.1);
}

TEST_CASE("select_action") {
  TripleQState st(1, 1, 2);
  SUBCASE("Z = 0 uses Q alone") {
    st.Q(1, 0, 0) = 0.2;
    st.Q(1, 0, 1) = 0.9;
    st.C(1, 0, 0) = 5.0;
    CHECK(select_action(st, 1, 0, 1.0) == 1);
  }
  SUBCASE("queue weight favours utility") {
    st.Q(1, 0, 0) = st.Q(1, 0, 1) = 0.5;
    st.C(1, 0, 0) = 0.1;
    st.C(1, 0, 1) = 0.9;
    st.Z = 2.0;
    CHECK(select_action(st, 1, 0, 2.0) == 1);
  }
  SUBCASE("ties go to the lowest index") { CHECK(select_action(st, 1, 0, 1.0) == 0); }
}

TEST_CASE("update_tables") {
  SUBCASE("full replacement at t = 1") {
    TripleQParams p;
    p.chi = 1.0;
    p.iota = 4.0;
    p.b_tilde = 0.01;
    p.eta = 1.0;
    TripleQState st(2, 2, 1);
    st.Q(2, 1, 0) = 0.7;
    st.C(2, 1, 0) = 0.4;
    update_tables(st, 0, 0, 0.3, 0.2, 1, 1, p);
    const double b1 = hoeffding_bonus(1, 1.0, 2, 4.0);
    CHECK(st.N(1, 0, 0) == 1);
    CHECK(st.Q(1, 0, 0) == doctest::Approx(0.3 + 0.7 + b1 + 2 * 2 * 0.01).epsilon(1e-15));
    CHECK(st.C(1, 0, 0) == doctest::Approx(0.2 + 0.4 + b1 + 2 * 2 * 0.01).epsilon(1e-15));
  }
  SUBCASE("terminal step") {
    TripleQParams p;
    p.chi = 1.0;
    p.iota = 4.0;
    TripleQState st(1, 1, 1);
    update_tables(st, 0, 0, 0.5, 0.5, kTerminal, 1, p);
    CHECK(st.Q(1, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(st.C(1, 0, 0) == st.Q(1, 0, 0));
  }
  SUBCASE("partial blend afterwards") {
    TripleQParams p;
    p.chi = 3.0;
    p.iota = 1.0;
    TripleQState st(1, 1, 1);
    update_tables(st, 0, 0, 0.5, 0.1, kTerminal, 1, p);
    const double q1 = st.Q(1, 0, 0);
    update_tables(st, 0, 0, 0.5, 0.1, kTerminal, 1, p);
    const double lr = learning_rate(2, 3.0);
    CHECK(st.Q(1, 0, 0) == doctest::Approx((1 - lr) * q1 + lr * (0.5 + hoeffding_bonus(2, 3.0, 1, 1.0))));
  }
}

TEST_CASE("end_of_frame") {
  TripleQParams p;
  TripleQState st(2, 2, 2);
  SUBCASE("queue step") {
    p.eps = 0.1;
    st.Cbar = 0.3;
    st.episode_in_frame = 3;
    end_of_frame(st, p, 0.5);
    CHECK(st.Z == doctest::Approx(0.5));
    CHECK(st.frame == 2);
    CHECK(st.episode_in_frame == 0);
    CHECK(st.Cbar == 0.0);
  }
  SUBCASE("clamped at zero") {
    st.Z = 0.2;
    st.Cbar = 1.5;
    st.episode_in_frame = 1;
    end_of_frame(st, p, 1.0);
    CHECK(st.Z == 0.0);
  }
  SUBCASE("tables reset") {
    st.Q(1, 1, 1) = 0.1;
    st.C(2, 0, 1) = 7.0;
    st.N(1, 0, 0) = 4;
    st.episode_in_frame = 1;
    end_of_frame(st, p, 0.0);
    for (double q : st.q_table()) CHECK(q == 2.0);
    for (double c : st.c_table()) CHECK(c == 2.0);
    for (int n : st.n_table()) CHECK(n == 0);
  }
  SUBCASE("queue disabled") {
    p.use_queue = false;
    st.Cbar = 0.0;
    st.episode_in_frame = 2;
    end_of_frame(st, p, 1.0);
    CHECK(st.Z == 0.0);
  }
}

TEST_CASE("single action: no regret") {
  std::vector<std::vector<StageModel>> stages(20, std::vector<StageModel>(3));
  for (int k = 0; k < 20; ++k)
    for (int h = 0; h < 3; ++h)
      stages[k][h] = StageModel::from_dense(h + 1, 2, 1, std::vector<double>{0, 1, 1, 0}, {0.3, 0.6}, {1, 1});
  const auto cmdp = NonstationaryCmdp::materialized(stages, {1, 0}, 1.0);
  QuietWarnings quiet;
  Rng rng(31);
  const auto eps = run_tripleq(cmdp, default_params(20, 1.0, 2, 1, 3), rng);
  std::vector<double> oracle;
  for (int k = 1; k <= 20; ++k) oracle.push_back(optimal_value(cmdp, k).optimal_value);
  const auto m = to_metrics(eps, oracle, 1.0);
  for (const auto& r : m.rows()) CHECK(r.regret_cum == doctest::Approx(0.0).epsilon(1e-12));
  for (const auto& e : eps) CHECK(e.realized_return == doctest::Approx(0.3 + 0.6 + 0.3));
}

TEST_CASE("run invariants") {
  QuietWarnings quiet;
  Rng gen(32);
  const int K = 3000;
  const auto model = small_model(4, 2, 4, K, 0.5, 0.5, gen);
  auto p = default_params(K, model.expected.total(), 4, 2, 4);
  TripleQOptions opts;
  opts.check_bounds = true;
  int frames_seen = 0;
  opts.on_episode = [&](const TripleQEpisode& ep, const TripleQState& st) {
    CHECK(st.Z >= 0.0);
    frames_seen = ep.frame;
  };
  Rng rng(33);
  const auto eps = run_tripleq(model.cmdp, p, rng, opts);
  CHECK(eps.size() == static_cast<std::size_t>(K));
  CHECK(frames_seen == (K + p.frame_len - 1) / p.frame_len);

  SUBCASE("flipped bonus sign breaks the bound") {
    p.bonus_scale = -1.0;
    Rng again(33);
    CHECK_THROWS_AS(run_tripleq(model.cmdp, p, again, opts), std::logic_error);
  }
  SUBCASE("same stream, same run") {
    Rng a(5), b(5);
    TripleQOptions plain;
    const auto x = run_tripleq(model.cmdp, p, a, plain);
    const auto y = run_tripleq(model.cmdp, p, b, plain);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].realized_return == y[i].realized_return);
  }
  SUBCASE("unconstrained baseline keeps Z at 0") {
    Rng again(34);
    for (const auto& e : run_tripleq(model.cmdp, unconstrained_params(K, 1.0, 4, 2, 4), again))
      CHECK(e.Z == 0.0);
  }
}

TEST_CASE("stationary feasible model: utility reaches the threshold") {
  QuietWarnings quiet;
  const int K = 20000, S = 3, A = 2, H = 3;
  Rng gen(35);
  auto base = random_base(S, A, H, K, gen);
  const double umax = max_utility_policy(base.stages, base.mu0).value.utility;
  base.rho = 0.5 * umax;
  const auto cmdp = build_drifting(std::vector<DriftSchedule>{}, std::move(base), gen).cmdp;
  double mean = 0.0;
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    Rng rng = make_stream(36, s);
    const auto eps = run_tripleq(cmdp, stationary_params(K, S, A, H), rng);
    double u = 0.0;
    for (int k = 3 * K / 4; k < K; ++k) u += eps[k].expected_utility;
    mean += u / (K / 4) / seeds;
  }
  CHECK(mean >= cmdp.rho() - 0.05);
}

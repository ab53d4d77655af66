#include <cmath>
#include <numbers>
#include <stdexcept>

#include "doctest.h"
#include "ncmdp/exp3.hpp"

using namespace ncmdp;

namespace {

Exp3State with_weights(std::vector<double> s, double gamma0) {
  Exp3State st(static_cast<int>(s.size()), gamma0);
  for (std::size_t j = 0; j < s.size(); ++j) st.log_weight(static_cast<int>(j)) = std::log(s[j]);
  return st;
}

}  // namespace

TEST_CASE("probabilities") {
  for (double g : {0.0, 0.3, 1.0}) {
    const auto p = exp3_probs(with_weights({1, 1, 1, 1}, g));
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  auto p = exp3_probs(with_weights({3, 1}, 0.0));
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-15));
  p = exp3_probs(with_weights({3, 1}, 1.0));
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("huge log weights stay finite") {
  auto st = with_weights({1, 1, 1}, 0.1);
  st.log_weight(1) = 5000.0;
  const auto p = exp3_probs(st);
  CHECK(std::isfinite(p[0]));
  CHECK(p[1] == doctest::Approx(0.9 + 0.1 / 3));
  CHECK(p[0] == doctest::Approx(0.1 / 3));
}

TEST_CASE("draw_arm") {
  Rng rng(41);
  SUBCASE("degenerate") {
    auto st = with_weights({1, 1, 1}, 0.0);
    st.log_weight(2) = 1e6;
    for (int i = 0; i < 1000; ++i) CHECK(draw_arm(st, rng) == 2);
  }
  SUBCASE("uniform frequencies") {
    const auto st = with_weights({1, 1, 1, 1}, 0.2);
    const int n = 1000000;
    std::vector<int> c(4, 0);
    for (int i = 0; i < n; ++i) ++c[draw_arm(st, rng)];
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int v : c) CHECK(std::abs(v - 0.25 * n) < 3 * sigma);
  }
  SUBCASE("gamma0 = 1 ignores the weights") {
    auto a = with_weights({100, 1}, 1.0);
    auto b = with_weights({1, 100}, 1.0);
    Rng r1(7), r2(7);
    for (int i = 0; i < 1000; ++i) CHECK(draw_arm(a, r1) == draw_arm(b, r2));
  }
}

TEST_CASE("exp3_update") {
  auto st = with_weights({1, 1}, 0.5);
  exp3_update(st, 0, 0.0);
  CHECK(st.log_weight(0) == 0.0);
  exp3_update(st, 0, 2.0);
  CHECK(std::exp(st.log_weight(0)) == doctest::Approx(std::exp(0.5)).epsilon(1e-15));
  CHECK(st.log_weight(1) == 0.0);
  auto frozen = with_weights({1, 1}, 0.0);
  exp3_update(frozen, 1, 10.0);
  CHECK(frozen.log_weight(1) == 0.0);
  CHECK_THROWS(exp3_update(st, 0, -1.0));
  CHECK_THROWS(exp3_update(st, 2, 1.0));
}

TEST_CASE("payoff shaping") {
  // W = 10, H = 2, K^lambda = 2, p = 0.5, G = 5 < W rho = 10.
  CHECK(shape_reward(7.0, 5.0, 10, 2, 1.0, 4, 0.5, 0.5) == doctest::Approx(2.5 / 15).epsilon(1e-12));
  // G = W rho takes the feasible branch.
  CHECK(shaped_payoff(3.0, 10.0, 10, 2, 1.0, 2.0) == doctest::Approx((3.0 + 5.0) / 30.0));
  CHECK(shaped_payoff(3.0, 9.999, 10, 2, 1.0, 2.0) == doctest::Approx(9.999 / 2 / 30.0));
  // Admissible R, G <= W H keep the payoff in [0, 1].
  for (double R : {0.0, 5.0, 20.0})
    for (double G : {0.0, 10.0, 20.0}) {
      const double v = shaped_payoff(R, G, 10, 2, 0.5, 3.0);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-15);
    }
  CHECK_THROWS_AS(shape_reward(1, 1, 10, 2, 1, 4, 0.5, 0.0), std::logic_error);
}

TEST_CASE("candidate grids") {
  CHECK(arm_count_exponent(1) == 0);
  CHECK(arm_count_exponent(3) == 2);
  CHECK(arm_count_exponent(100) == 5);
  const auto c = geometric_candidates(0.5, 100);
  REQUIRE(c.values.size() == 6);
  CHECK(c.values.front() == doctest::Approx(0.5));
  CHECK(c.values.back() == doctest::Approx(50.0));
  for (std::size_t j = 1; j < c.values.size(); ++j) CHECK(c.values[j] > c.values[j - 1]);
  const auto t = tabular_candidates_with_delta(1000, 10, 4.0);
  CHECK(t.values.front() == doctest::Approx(10.0 / (8.0 * 10)));
  CHECK(t.Delta == 4.0);
  CHECK(tabular_candidates(1000, 10, 2, 2, 2, 0.5).values.size() == 4);
}

TEST_CASE("gamma0") {
  const double K = 10000, W = 100, H = 5;
  const double expect = std::sqrt((K / W) * std::log(K / W) / ((std::numbers::e - 1) * K * H));
  CHECK(exp3_gamma0(10000, 100, 5) == doctest::Approx(expect).epsilon(1e-15));
  CHECK(exp3_gamma0(10, 10, 5) == 0.0);
  CHECK_THROWS(exp3_gamma0(5, 10, 1));
  CHECK(exp3_gamma0(4, 1, 1) <= 1.0);
}

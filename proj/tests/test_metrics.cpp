#include <cmath>
#include <string>

#include "doctest.h"
#include "ncmdp/log.hpp"
#include "ncmdp/metrics.hpp"

using namespace ncmdp;

TEST_CASE("regret and violation sums") {
  SUBCASE("playing the optimum") {
    MetricsSeries m(0.5);
    for (int k = 1; k <= 5; ++k) m.accumulate(k, 0.3 * k, 0.5, 0.3 * k);
    CHECK(m.regret() == 0.0);
    CHECK(m.violation() == 0.0);
  }
  SUBCASE("deficits add up") {
    MetricsSeries m(1.0);
    m.accumulate(1, 0, 0.9, 0);
    m.accumulate(2, 0, 0.7, 0);
    CHECK(m.violation() == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(m.rows()[0].violation_cum == doctest::Approx(0.1));
  }
  SUBCASE("surplus offsets deficit") {
    MetricsSeries m(1.0);
    m.accumulate(1, 0, 0.5, 0);
    m.accumulate(2, 0, 1.5, 0);
    CHECK(m.violation() == doctest::Approx(0.0));
  }
  SUBCASE("episodes must increase") {
    MetricsSeries m(0.0);
    m.accumulate(2, 0, 0, 0);
    CHECK_THROWS(m.accumulate(2, 0, 0, 0));
    CHECK_THROWS(m.accumulate(1, 0, 0, 0));
  }
  SUBCASE("cumulative regret column") {
    MetricsSeries m(0.0);
    m.accumulate(1, 0.5, 0, 1.0);
    m.accumulate(2, 0.25, 0, 1.0);
    const auto c = m.cumulative_regret();
    REQUIRE(c.size() == 2);
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(1.25));
  }
}

TEST_CASE("regret slope of exact power laws") {
  for (double p : {1.0, 0.8, 0.5}) {
    std::vector<double> cum;
    for (int k = 1; k <= 1000; ++k) cum.push_back(3.0 * std::pow(k, p));
    CHECK(regret_slope(cum, 0.5) == doctest::Approx(p).epsilon(1e-6));
    CHECK(regret_slope(cum, 1.0) == doctest::Approx(p).epsilon(1e-6));
  }
}

TEST_CASE("regret slope needs data") {
  std::vector<double> few(9, 1.0);
  CHECK_THROWS_AS(regret_slope(few, 1.0), InsufficientData);
  std::vector<double> zeros(100, 0.0);
  CHECK_THROWS_AS(regret_slope(zeros, 0.5), InsufficientData);
}

TEST_CASE("warning sink") {
  std::string seen;
  set_warning_sink([&](std::string_view m) { seen = std::string(m); });
  warn("hello");
  CHECK(seen == "hello");
  set_warning_sink({});
}

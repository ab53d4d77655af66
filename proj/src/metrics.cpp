#include "ncmdp/metrics.hpp"

#include <cmath>
#include <string>

namespace ncmdp {

void MetricsSeries::accumulate(int k, double realized_return, double realized_utility,
                               double oracle_value) {
  if (!rows_.empty() && k <= rows_.back().k)
    throw std::invalid_argument("metrics: episode " + std::to_string(k) + " out of order");
  EpisodeMetrics m{k, realized_return, realized_utility, oracle_value, regret(), violation()};
  m.regret_cum += oracle_value - realized_return;
  m.violation_cum += rho_ - realized_utility;
  rows_.push_back(m);
}

std::vector<double> MetricsSeries::cumulative_regret() const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r.regret_cum);
  return out;
}

double regret_slope(std::span<const double> cumulative, double window) {
  if (!(window > 0.0 && window <= 1.0))
    throw std::invalid_argument("regret_slope: window must lie in (0, 1]");
  const auto n = cumulative.size();
  const auto first = n - static_cast<std::size_t>(std::ceil(window * static_cast<double>(n)));
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t m = 0;
  for (std::size_t i = first; i < n; ++i) {
    if (!(cumulative[i] > 0.0)) continue;
    const double x = std::log(static_cast<double>(i + 1));
    const double y = std::log(cumulative[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 10) throw InsufficientData("regret_slope: fewer than 10 positive points in window");
  const double md = static_cast<double>(m);
  return (md * sxy - sx * sy) / (md * sxx - sx * sx);
}

double regret_slope(const MetricsSeries& metrics, double window) {
  const auto c = metrics.cumulative_regret();
  return regret_slope(c, window);
}

}  // namespace ncmdp

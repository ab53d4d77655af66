#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace ncmdp {

class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeMetrics {
  int k = 0;
  double realized_return = 0.0;
  double realized_utility = 0.0;
  double oracle_value = 0.0;
  double regret_cum = 0.0;
  double violation_cum = 0.0;
};

/// One episode of any learner, as the harness sees it.
struct EpisodeRecord {
  int k = 0;
  double realized_return = 0.0;
  double realized_utility = 0.0;
  /// Exact values of the policy played, when the learner can provide them.
  double expected_return = 0.0;
  double expected_utility = 0.0;
  double aux1 = 0.0;
  double aux2 = 0.0;
};

/// Per-episode realized values next to the oracle optimum, with running
/// dynamic regret (sum of oracle - return) and violation (sum of rho - utility).
class MetricsSeries {
 public:
  explicit MetricsSeries(double rho) : rho_(rho) {}

  /// Episodes must arrive in increasing k.
  void accumulate(int k, double realized_return, double realized_utility, double oracle_value);

  double rho() const { return rho_; }
  const std::vector<EpisodeMetrics>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  double regret() const { return rows_.empty() ? 0.0 : rows_.back().regret_cum; }
  double violation() const { return rows_.empty() ? 0.0 : rows_.back().violation_cum; }
  std::vector<double> cumulative_regret() const;

 private:
  double rho_;
  std::vector<EpisodeMetrics> rows_;
};

/// Least-squares slope of log(regret) against log(k) over the trailing
/// `window` fraction of the series. cumulative[i] belongs to k = i + 1.
/// Nonpositive entries are skipped; fewer than 10 usable points throws
/// InsufficientData.
double regret_slope(std::span<const double> cumulative, double window);

double regret_slope(const MetricsSeries& metrics, double window);

}  // namespace ncmdp

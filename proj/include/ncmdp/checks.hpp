#pragma once

// Property suites shared by `ncmdp check` and the acceptance binary. Each
// returns a report entry instead of throwing.

#include <cstdint>
#include <string>
#include <vector>

namespace ncmdp {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
  std::uint64_t seed = 0;
  double seconds = 0.0;
};

/// Dual search against the exhaustive hull reference on random models with
/// S, A, H <= 3 (including some infeasible thresholds).
CheckOutcome check_oracle_exactness(int instances, std::uint64_t seed, double tol = 1e-6);

/// Triple-Q on a drifting 4-state model with every update checked against
/// the table bound, and Z >= 0 at every frame.
CheckOutcome check_q_boundedness(int episodes, std::uint64_t seed, double bonus_scale = 1.0);

/// N_h(x,a) equals the visits since the last reset.
CheckOutcome check_visit_counting(int episodes, std::uint64_t seed);

/// Simplex invariants of the Exp3 probabilities over a fuzzed update run.
CheckOutcome check_exp3_invariants(int epochs, std::uint64_t seed);

/// Exhaustive expectation of the importance-weighted estimate equals the
/// shaped payoff of every arm.
CheckOutcome check_exp3_estimator(std::uint64_t seed, double tol = 1e-12);

/// Two Bernoulli arms whose shaped payoffs differ by 0.2; mean terminal
/// probability of the better arm over `seeds` runs must exceed 1/2.
CheckOutcome check_exp3_better_arm(int seeds, std::uint64_t seed);

/// One-hot feature LSVI against the count recursion (Q tables and actions).
CheckOutcome check_lsvi_backends(int episodes, std::uint64_t seed, double tol = 1e-8);

/// Rank-one inverse maintenance and ridge weights against dense solves.
CheckOutcome check_sherman_morrison(int sequences, std::uint64_t seed, double tol = 1e-8);

/// Soft-max gap bound at every visited state of several LSVI runs.
CheckOutcome check_softmax_gap(int episodes, std::uint64_t seed);

/// Y in [0, xi] for LSVI (inner and outer duals) and Z >= 0 for Triple-Q.
CheckOutcome check_dual_ranges(int episodes, std::uint64_t seed);

/// Closed-form budgets of all four schedule kinds against measurement.
CheckOutcome check_budget_accounting(std::uint64_t seed, double tol = 1e-9);

/// Running regret and violation sums rebuilt from the per-episode columns.
CheckOutcome check_metrics_sums(std::uint64_t seed, double tol = 1e-9);

struct CheckOptions {
  std::uint64_t seed = 1;
  /// Passed to the Q-boundedness suite; -1 flips the bonus sign.
  double bonus_scale = 1.0;
};

/// Every suite at small scale.
std::vector<CheckOutcome> check_invariants(const CheckOptions& opts = {});

}  // namespace ncmdp

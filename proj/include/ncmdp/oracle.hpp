#pragma once

// Exact per-episode constrained optimum via the Lagrangian dual of the
// occupancy-measure LP, plus the occupancy measure itself.

#include <span>
#include <vector>

#include "ncmdp/cmdp.hpp"

namespace ncmdp {

/// q_h(x,a) for h in [1..H], stored [h-1][x][a].
class OccupancyMeasure {
 public:
  OccupancyMeasure(int horizon, int num_states, int num_actions, std::vector<double> q);

  double at(int h, int x, int a) const {
    return q_[(static_cast<std::size_t>(h - 1) * S_ + x) * A_ + a];
  }
  int horizon() const { return H_; }
  int num_states() const { return S_; }
  int num_actions() const { return A_; }

  /// Largest absolute violation of normalization, flow conservation, the
  /// initial-distribution constraint and nonnegativity.
  double constraint_residual(std::span<const StageModel> stages,
                             std::span<const double> mu0) const;
  /// sum_{h,x,a} q_h(x,a) * f_h(x,a) with f = reward (or utility).
  double expected_reward(std::span<const StageModel> stages) const;
  double expected_utility(std::span<const StageModel> stages) const;

 private:
  int H_;
  int S_;
  int A_;
  std::vector<double> q_;
};

OccupancyMeasure occupancy_measure(std::span<const StageModel> stages,
                                   std::span<const double> mu0, const StochasticPolicy& pi);

/// Deterministic Markov policy, actions laid out [h-1][x].
struct DeterministicPolicy {
  std::vector<int> actions;
  PolicyValue value;
};

/// Maximizer of V_r + lambda * V_g by backward induction. Ties on the
/// composite are broken toward higher utility, then lower action index.
DeterministicPolicy lagrangian_best_response(std::span<const StageModel> stages,
                                             std::span<const double> mu0, double lambda);

/// Utility-maximizing policy, ties broken toward higher reward.
DeterministicPolicy max_utility_policy(std::span<const StageModel> stages,
                                       std::span<const double> mu0);

/// d(lambda) = max_pi [V_r + lambda (V_g - threshold)].
double lagrangian_dual(std::span<const StageModel> stages, std::span<const double> mu0,
                       double threshold, double lambda);

struct OracleResult {
  double optimal_value = 0.0;
  double optimal_utility = 0.0;
  double dual_lambda = 0.0;
  bool feasible = false;
  int iterations = 0;
  /// Optimal occupancy = weight * q(first) + (1 - weight) * q(second).
  std::vector<int> first;
  std::vector<int> second;
  double weight = 1.0;
};

/// Optimum of the episode LP with utility threshold `threshold`.
OracleResult solve_episode(std::span<const StageModel> stages, std::span<const double> mu0,
                           double threshold);

OracleResult optimal_value(const NonstationaryCmdp& cmdp, int k);

/// Optimum with the threshold raised to rho + eps.
OracleResult tightened_optimal(const NonstationaryCmdp& cmdp, int k, double eps);

/// optimal_value (or tightened_optimal) for every episode; OpenMP over k.
std::vector<OracleResult> sweep_optimal_values(const NonstationaryCmdp& cmdp, double eps = 0.0);

/// Single-threaded reference of sweep_optimal_values.
std::vector<OracleResult> sweep_optimal_values_serial(const NonstationaryCmdp& cmdp,
                                                      double eps = 0.0);

/// Stochastic policy that realizes a two-policy mixture only in occupancy
/// space; used to evaluate the oracle's solution with policy_value.
StochasticPolicy mixture_policy(std::span<const StageModel> stages, std::span<const double> mu0,
                                const OracleResult& result);

}  // namespace ncmdp

#pragma once

// Environment builders: the obstacle grid world with drifting slip, reward and
// cost, and synthetic CMDPs whose drift schedules have closed-form variation
// budgets.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ncmdp/cmdp.hpp"
#include "ncmdp/rng.hpp"

namespace ncmdp {

/// Raised when an environment or schedule description is invalid.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Grid world

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

enum class GridAction : int { Up = 0, Down = 1, Left = 2, Right = 3 };

struct GridWorldConfig {
  int width = 5;
  int height = 5;
  Cell start{0, 0};
  Cell goal{4, 4};
  /// Default double band cuts the start pocket off from the rest of the
  /// grid, so every trip to the goal crosses two obstacles.
  std::vector<Cell> obstacles{{0, 2}, {1, 1}, {2, 0}, {0, 3}, {1, 2}, {2, 1}, {3, 0}};
  int episodes = 1000;
  int horizon = 30;
  double slip0 = 0.05;
  /// Per-episode drifts. Negative means "0.1 / K".
  double slip_drift = -1.0;
  double reward_drift = -1.0;
  double cost_drift = -1.0;
  double cost_budget = 5.0;
  /// After the goal step the agent is sent back to the start cell, so an
  /// episode consists of repeated trips.
  bool goal_resets = true;
  std::uint64_t drift_seed = 7;

  /// Copy with the negative drift fields replaced by 0.1 / K.
  GridWorldConfig resolved() const;
};

/// Geometry helpers shared by the builder and its tests.
class GridGeometry {
 public:
  explicit GridGeometry(const GridWorldConfig& cfg);

  int num_states() const { return width_ * height_; }
  int index(Cell c) const { return c.row * width_ + c.col; }
  Cell cell(int s) const { return {s / width_, s % width_}; }
  /// Cell reached by executing `a` from `s`; moving off the grid stays put.
  int move(int s, int a) const;
  bool is_obstacle(int s) const { return obstacle_[s]; }
  /// 0.1 * (d_max - d0(x)) / d_max with Euclidean d0 to the goal.
  double shaping_reward(int s) const;
  double goal_distance(int s) const;
  double max_distance() const { return d_max_; }

 private:
  int width_;
  int height_;
  Cell goal_;
  std::vector<bool> obstacle_;
  double d_max_;
};

inline constexpr double kGoalReward = 1.0;

NonstationaryCmdp build_gridworld(const GridWorldConfig& cfg);

/// Per-step obstacle cost c_k(x) at episode k (utility is 1 - cost).
double gridworld_cost(const GridWorldConfig& cfg, const GridGeometry& geo, int k, int s);

// ---------------------------------------------------------------------------
// Synthetic drift

enum class DriftKind { RewardRamp, UtilityRamp, KernelInterpolation, PiecewiseSwitch };

struct StepSite {
  int x = 0;
  int a = 0;
  int h = 1;
};

struct DriftSchedule {
  DriftKind kind = DriftKind::RewardRamp;
  /// RewardRamp/UtilityRamp: additive change per episode.
  /// KernelInterpolation: interpolation step per episode toward the target row.
  /// PiecewiseSwitch: mixing weight of the target row in the "on" phase.
  double magnitude = 0.0;
  /// PiecewiseSwitch: episodes per phase.
  int period = 1;
  std::vector<StepSite> affected;
  /// Kernel kinds: one target row per affected site. Sampled uniformly on
  /// the simplex when left empty.
  std::vector<std::vector<KernelEntry>> targets;
};

/// Stationary starting point for build_drifting: H stage models repeated for
/// every episode before any schedule is applied.
struct DriftBase {
  std::vector<StageModel> stages;
  std::vector<double> mu0;
  double rho = 0.0;
  int episodes = 1;
  std::optional<double> slater_delta;
};

struct DriftingCmdp {
  NonstationaryCmdp cmdp;
  VariationBudgets expected;
};

/// Applies the schedules lazily on top of `base`. Each of reward, utility and
/// kernel may be driven by at most one schedule, which keeps the returned
/// closed-form budgets exact.
DriftingCmdp build_drifting(std::span<const DriftSchedule> schedules, DriftBase base, Rng& rng);

DriftingCmdp build_drifting(const DriftSchedule& schedule, DriftBase base, Rng& rng);

/// Random stationary stages: kernel rows uniform on the simplex, rewards and
/// utilities uniform on [0,1], mu0 uniform on the simplex.
DriftBase random_base(int num_states, int num_actions, int horizon, int episodes, Rng& rng);

/// Uniform draw from the probability simplex of dimension n.
std::vector<double> random_simplex(int n, Rng& rng);

}  // namespace ncmdp

#pragma once

// Tabular episodic CMDP whose kernels, rewards and utilities depend on the
// episode index. Episodes and steps are 1-based (k in [1..K], h in [1..H]);
// states and actions are 0-based.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ncmdp/rng.hpp"

namespace ncmdp {

/// Tolerance used for every probability normalization check.
inline constexpr double kProbTol = 1e-12;

/// Marker returned by step() after the last step of an episode.
inline constexpr int kTerminal = -1;

/// Raised on malformed model data (rows off the simplex, values outside
/// [0,1], inconsistent dimensions).
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct KernelEntry {
  int next;
  double prob;
};

/// P_{k,h}, r_{k,h}, g_{k,h} for one (episode, step). Kernel rows are kept
/// sparse; zero-probability entries are dropped.
class StageModel {
 public:
  StageModel() = default;
  StageModel(int h, int num_states, int num_actions,
             std::vector<std::vector<KernelEntry>> rows,
             std::vector<double> reward, std::vector<double> utility);

  /// kernel is laid out [x][a][x'], reward/utility [x][a].
  static StageModel from_dense(int h, int num_states, int num_actions,
                               std::span<const double> kernel,
                               std::vector<double> reward,
                               std::vector<double> utility);

  int step_index() const { return h_; }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }

  std::span<const KernelEntry> row(int x, int a) const {
    const auto i = static_cast<std::size_t>(x * num_actions_ + a);
    return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  double prob(int x, int a, int next) const;
  double reward(int x, int a) const { return reward_[x * num_actions_ + a]; }
  double utility(int x, int a) const { return utility_[x * num_actions_ + a]; }

  std::span<const double> rewards() const { return reward_; }
  std::span<const double> utilities() const { return utility_; }

 private:
  int h_ = 0;
  int num_states_ = 0;
  int num_actions_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<KernelEntry> entries_;
  std::vector<double> reward_;
  std::vector<double> utility_;
};

/// Where stage models come from. A source may keep K*H tables in memory or
/// generate them on demand from a drift schedule; consumers only see this
/// interface. Implementations must be immutable and thread-safe.
class StageSource {
 public:
  virtual ~StageSource() = default;

  virtual StageModel stage(int k, int h) const = 0;
  virtual double reward(int k, int h, int x, int a) const = 0;
  virtual double utility(int k, int h, int x, int a) const = 0;
  /// Overwrites `out` with the nonzero entries of P_{k,h}(.|x,a).
  virtual void kernel_row(int k, int h, int x, int a,
                          std::vector<KernelEntry>& out) const = 0;
};

/// Stage models held in memory, indexed [k-1][h-1].
class MaterializedStages final : public StageSource {
 public:
  explicit MaterializedStages(std::vector<std::vector<StageModel>> stages);

  StageModel stage(int k, int h) const override { return at(k, h); }
  double reward(int k, int h, int x, int a) const override {
    return at(k, h).reward(x, a);
  }
  double utility(int k, int h, int x, int a) const override {
    return at(k, h).utility(x, a);
  }
  void kernel_row(int k, int h, int x, int a,
                  std::vector<KernelEntry>& out) const override;

  const StageModel& at(int k, int h) const { return stages_[k - 1][h - 1]; }
  int num_episodes() const { return static_cast<int>(stages_.size()); }

 private:
  std::vector<std::vector<StageModel>> stages_;
};

class NonstationaryCmdp {
 public:
  NonstationaryCmdp(int num_states, int num_actions, int horizon, int episodes,
                    std::vector<double> mu0, double rho,
                    std::optional<double> slater_delta,
                    std::shared_ptr<const StageSource> source);

  /// Convenience constructor for materialized models: `stages` must hold
  /// exactly K entries of exactly H stage models.
  static NonstationaryCmdp materialized(std::vector<std::vector<StageModel>> stages,
                                        std::vector<double> mu0, double rho,
                                        std::optional<double> slater_delta = {});

  int num_states() const { return S_; }
  int num_actions() const { return A_; }
  int horizon() const { return H_; }
  int episodes() const { return K_; }
  double rho() const { return rho_; }
  std::optional<double> slater_delta() const { return slater_delta_; }
  std::span<const double> mu0() const { return mu0_; }
  const StageSource& source() const { return *source_; }

  StageModel stage(int k, int h) const;
  /// All H stage models of episode k.
  std::vector<StageModel> episode(int k) const;

  /// Same model with a different constraint threshold (shares the source).
  NonstationaryCmdp with_rho(double rho) const;

  void check_episode(int k) const;
  void check_step(int k, int h) const;

 private:
  int S_;
  int A_;
  int H_;
  int K_;
  std::vector<double> mu0_;
  double rho_;
  std::optional<double> slater_delta_;
  std::shared_ptr<const StageSource> source_;
};

/// pi_h(a|x) for every step and state. Deterministic policies are one-hot.
class StochasticPolicy {
 public:
  StochasticPolicy(int horizon, int num_states, int num_actions,
                   std::vector<double> probs);

  static StochasticPolicy uniform(int horizon, int num_states, int num_actions);
  /// actions laid out [h-1][x].
  static StochasticPolicy deterministic(int horizon, int num_states, int num_actions,
                                        std::span<const int> actions);

  int horizon() const { return H_; }
  int num_states() const { return S_; }
  int num_actions() const { return A_; }

  std::span<const double> at(int h, int x) const {
    return {probs_.data() + (static_cast<std::size_t>(h - 1) * S_ + x) * A_,
            static_cast<std::size_t>(A_)};
  }
  std::span<const double> flat() const { return probs_; }

 private:
  int H_;
  int S_;
  int A_;
  std::vector<double> probs_;
};

struct StepRecord {
  int x;
  int a;
  double r;
  double g;
};

struct Trajectory {
  int k = 0;
  std::vector<StepRecord> steps;
  double total_return = 0.0;
  double total_utility = 0.0;
};

struct StepResult {
  int next_state;  // kTerminal after step H
  double reward;
  double utility;
};

struct PolicyValue {
  double reward = 0.0;   // E[V_{k,1}] under mu0
  double utility = 0.0;  // E[W_{k,1}] under mu0
};

struct VariationBudgets {
  double reward = 0.0;
  double utility = 0.0;
  double kernel = 0.0;
  double total() const { return reward + utility + kernel; }
};

int sample_initial(const NonstationaryCmdp& cmdp, Rng& rng);

StepResult step(const NonstationaryCmdp& cmdp, int k, int h, int x, int a, Rng& rng);

/// Exact backward-induction evaluation of pi at episode k.
PolicyValue policy_value(const NonstationaryCmdp& cmdp, int k, const StochasticPolicy& pi);

/// Same, on already materialized stages of one episode.
PolicyValue policy_value(std::span<const StageModel> stages, std::span<const double> mu0,
                         const StochasticPolicy& pi);

/// Samples one episode under pi.
Trajectory rollout(const NonstationaryCmdp& cmdp, int k, const StochasticPolicy& pi, Rng& rng);

/// (B_r, B_g, B_p) over the whole episode range.
VariationBudgets variation_budgets(const NonstationaryCmdp& cmdp);

/// Budgets restricted to consecutive pairs (k, k+1) with first <= k < last.
VariationBudgets variation_budgets(const NonstationaryCmdp& cmdp, int first, int last);

}  // namespace ncmdp

#pragma once

// Restarted primal-dual least-squares value iteration for linear CMDPs:
// ridge heads for reward and utility with an elliptical bonus, soft-max
// policies over the composite Q, and a truncated dual variable.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ncmdp/bob.hpp"
#include "ncmdp/cmdp.hpp"
#include "ncmdp/metrics.hpp"
#include "ncmdp/rng.hpp"

namespace ncmdp {

/// phi(x, a) in R^d for a finite state-action space.
class FeatureMap {
 public:
  FeatureMap(int num_states, int num_actions, std::vector<Eigen::VectorXd> phi);

  /// e_{x*A+a} in R^{S*A}.
  static FeatureMap one_hot(int num_states, int num_actions);

  int dim() const { return d_; }
  int num_states() const { return S_; }
  int num_actions() const { return A_; }
  const Eigen::VectorXd& operator()(int x, int a) const { return phi_[x * A_ + a]; }

 private:
  int S_;
  int A_;
  int d_;
  std::vector<Eigen::VectorXd> phi_;
};

/// Finite-state linear CMDP: P_{k,h}(x'|x,a) = <phi(x,a), mu_{k,h}(x')>,
/// r = <phi, theta_r>, g = <phi, theta_g>. Each parameter moves linearly from
/// its start to its end value over the episodes; mu rows are distributions and
/// phi lies on the simplex, so every induced row is a distribution.
struct LinearCmdpGroundTruth {
  FeatureMap features;
  /// Indexed [h-1]. mu is d x S.
  std::vector<Eigen::VectorXd> theta_r0, theta_r1, theta_g0, theta_g1;
  std::vector<Eigen::MatrixXd> mu0, mu1;
  std::vector<double> initial;
  double rho = 0.0;
  int episodes = 1;
  std::optional<double> slater_delta;

  int horizon() const { return static_cast<int>(theta_r0.size()); }
  double interpolation(int k) const;
  Eigen::VectorXd theta_r(int k, int h) const;
  Eigen::VectorXd theta_g(int k, int h) const;
  Eigen::MatrixXd mu(int k, int h) const;

  /// B_r = sum ||theta_r diffs||_2, B_g likewise, B_p = sum ||mu diffs||_F.
  VariationBudgets parameter_budgets() const;
};

/// Random ground truth: phi on the simplex (d coordinates), mu rows uniform
/// on the simplex over S, theta entries uniform on [0,1]. `drift` scales how
/// far the end parameters move from the start ones (0 = stationary).
LinearCmdpGroundTruth random_linear_cmdp(int S, int A, int d, int H, int K, double drift, Rng& rng);

/// Lazy tabular view of the ground truth.
NonstationaryCmdp build_linear_cmdp(const LinearCmdpGroundTruth& truth);

struct LsviParams {
  double ridge_lambda = 1.0;
  double xi = 1.0;
  double alpha = 1.0;
  double eta = 0.0;
  double beta = 1.0;
  int frame_len = 1;
  double p_fail = 0.01;
};

/// Theory defaults for K episodes, budget B (<= 0 treated as 1), feature
/// dimension d, |A| actions, horizon H and Slater constant delta:
/// xi = 2H/delta, alpha = log|A| K / (2(1+xi+H)), eta = xi / sqrt(K H^2),
/// beta = d H sqrt(log(2 log|A| d T / p)) with T = K H,
/// frame_len = ceil(B^{-1/2} d^{1/2} K^{1/2} H^{-1/2}) capped at K.
LsviParams lsvi_default_params(int K, double B, int d, int A, int H, double delta,
                               double p_fail = 0.01);

struct Transition {
  int x;
  int a;
  int next;
  double r;
  double g;
};

enum class LsviBackend { Features, Counts };

/// Per-frame regression state plus the dual variable, which persists across
/// frames.
class LsviState {
 public:
  LsviState(int horizon, const FeatureMap& features, double ridge_lambda);

  int horizon() const { return H_; }
  int dim() const { return d_; }
  double ridge_lambda() const { return lambda_; }

  const Eigen::MatrixXd& gram(int h) const { return gram_[h - 1]; }
  const Eigen::MatrixXd& gram_inv(int h) const { return gram_inv_[h - 1]; }
  const std::vector<Transition>& replay(int h) const { return replay_[h - 1]; }
  Eigen::VectorXd& w_r(int h) { return w_r_[h - 1]; }
  Eigen::VectorXd& w_g(int h) { return w_g_[h - 1]; }
  const Eigen::VectorXd& w_r(int h) const { return w_r_[h - 1]; }
  const Eigen::VectorXd& w_g(int h) const { return w_g_[h - 1]; }

  /// Appends to the replay and folds phi into Lambda_h (rank-one update of
  /// the inverse).
  void add_sample(int h, const Transition& t);
  /// Clears replay, Gram matrices and weights; Y is kept.
  void reset_frame();

  const FeatureMap& features() const { return *features_; }

  double Y = 0.0;
  int episode_in_frame = 0;
  int frame = 1;

 private:
  int H_;
  int d_;
  double lambda_;
  const FeatureMap* features_;
  std::vector<Eigen::MatrixXd> gram_;
  std::vector<Eigen::MatrixXd> gram_inv_;
  std::vector<std::vector<Transition>> replay_;
  std::vector<Eigen::VectorXd> w_r_;
  std::vector<Eigen::VectorXd> w_g_;
};

/// Lambda_h^{-1} sum_tau phi_tau y_tau for both heads; targets are indexed
/// like replay(h). Throws std::runtime_error if the normal-equation residual
/// exceeds 1e-10 relative to the right-hand side.
std::pair<Eigen::VectorXd, Eigen::VectorXd> ridge_fit(const LsviState& st, int h,
                                                      std::span<const double> targets_r,
                                                      std::span<const double> targets_g);

/// min{<w, phi> + beta sqrt(phi' Lambda^{-1} phi), H}, clipped below at 0.
std::pair<double, double> q_estimate(const LsviState& st, int h, int x, int a, double beta);

/// exp(alpha c_a) / sum exp(alpha c_b), max-shifted.
std::vector<double> softmax_policy(std::span<const double> composite, double alpha);

/// clip(Y + eta (threshold - V_g1), 0, xi).
double dual_update(double Y, double eta, double threshold, double V_g1, double xi);

/// Count-based ridge head for one-hot features:
/// (sum_r + sum_x' n(x,a,x') V(x')) / (n(x,a) + lambda).
double tabular_counts_update(int n, std::span<const int> n_next, double reward_sum,
                             std::span<const double> V_next, double ridge_lambda);

struct LsviEpisode {
  int k = 0;
  double realized_return = 0.0;
  double realized_utility = 0.0;
  double expected_return = 0.0;
  double expected_utility = 0.0;
  double Y = 0.0;
  int frame = 1;
  double w_r_norm = 0.0;
  double w_g_norm = 0.0;
  double min_eig_gram1 = 0.0;
  /// Largest soft-max gap minus log|A|/alpha over visited states (<= 0 when
  /// the bound holds).
  double softmax_gap_excess = 0.0;
};

struct LsviOptions {
  LsviBackend backend = LsviBackend::Features;
  int first_episode = 1;
  int num_episodes = 0;  // 0: through the last episode
  bool evaluate_policy = true;
  /// Throw std::logic_error on a soft-max gap or dual-range violation.
  bool check_invariants = false;
  std::function<void(const LsviEpisode&)> on_episode;
  /// Called with the Q tables [h-1][x*A+a] of both heads after every
  /// backward pass (used to compare backends).
  std::function<void(int k, std::span<const double> q_r, std::span<const double> q_g)> on_q;
};

std::vector<LsviEpisode> run_lsvi(const NonstationaryCmdp& cmdp, const FeatureMap& features,
                                  const LsviParams& params, Rng& rng, const LsviOptions& opts = {});

enum class UnknownBudgetVariant { Exp3, OuterPrimalDual };

struct LsviUnknownParams {
  UnknownBudgetVariant variant = UnknownBudgetVariant::Exp3;
  int W = 0;  // 0: ceil(K^{1/2}) for Exp3, ceil(d^{1/2} H^{-1/2} K^{1/2}) for the outer variant
  double lambda_exp = 1.0 / 8.0;
  double delta = 0.0;  // 0: from the cmdp
  std::optional<double> Delta;
  double p_fail = 0.01;
  /// Replaces the candidate grid when nonempty (budgets for Exp3, frame
  /// lengths for the outer variant).
  std::vector<double> candidates;
  std::function<void(LsviParams&)> tune;
  LsviBackend backend = LsviBackend::Features;
};

struct LsviUnknownRun {
  CandidateSet candidates;
  int W = 0;
  double gamma0 = 0.0;
  /// Outer dual per epoch (outer variant only).
  std::vector<double> outer_Y;
  double outer_eta = 0.0;
  BobRun run;
};

/// Linear candidate grid: sqrt(K) W^{j/J} / (Delta W) with
/// Delta = (6 (1+xi) / (xi delta) (1+delta) d^{5/4} H^{9/4})^4.
CandidateSet linear_candidates(int K, int W, int d, int H, double delta);

/// (R + Y G) / (W H (1 + xi)).
double outer_payoff(double R, double G, double Y, double W, int H, double xi);

/// Episode aux columns: aux1 = Y (outer Y for the outer variant, inner Y
/// otherwise), aux2 = arm.
LsviUnknownRun run_lsvi_unknown_budget(const NonstationaryCmdp& cmdp, const FeatureMap& features,
                                       const LsviUnknownParams& params, Rng& rng);

}  // namespace ncmdp

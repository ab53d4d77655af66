#pragma once

// Non-stationary Triple-Q: optimistic Q/C learning with a Hoeffding bonus and
// a drift bonus, a virtual queue on the utility constraint, and periodic
// frame resets of all tables.

#include <functional>
#include <span>
#include <vector>

#include "ncmdp/cmdp.hpp"
#include "ncmdp/metrics.hpp"
#include "ncmdp/rng.hpp"

namespace ncmdp {

struct TripleQParams {
  double alpha_exp = 0.6;
  double c_exp = 2.0 / 3.0;
  double eta = 1.0;
  double chi = 1.0;
  double eps = 0.0;
  double iota = 1.0;
  double b_tilde = 0.0;
  int frame_len = 1;
  /// Multiplies the Hoeffding bonus. Only tests change it.
  double bonus_scale = 1.0;
  /// false pins Z at 0 (unconstrained baseline).
  bool use_queue = true;
};

/// Theory defaults for K episodes with variation budget B (B <= 0 is treated
/// as 1). b_tilde = B^{1-c} K^{alpha-1}, frame_len = ceil(K^alpha / B^c).
TripleQParams default_params(int K, double B, int S, int A, int H);

/// Stationary baseline: one frame spanning all K episodes and b_tilde = 0.
TripleQParams stationary_params(int K, int S, int A, int H);

/// Unconstrained baseline: default_params with the queue disabled.
TripleQParams unconstrained_params(int K, double B, int S, int A, int H);

/// (chi + 1) / (chi + t); t must be at least 1.
double learning_rate(int t, double chi);

/// 1/4 * sqrt(H^2 iota (chi + 1) / (chi + t)).
double hoeffding_bonus(int t, double chi, int H, double iota);

/// Upper bound H^2 (sqrt(iota) + 2 b_tilde) on every Q and C entry.
double q_upper_bound(const TripleQParams& p, int H);

class TripleQState {
 public:
  TripleQState(int horizon, int num_states, int num_actions);

  int horizon() const { return H_; }
  int num_states() const { return S_; }
  int num_actions() const { return A_; }

  double& Q(int h, int x, int a) { return Q_[idx(h, x, a)]; }
  double& C(int h, int x, int a) { return C_[idx(h, x, a)]; }
  int& N(int h, int x, int a) { return N_[idx(h, x, a)]; }
  double Q(int h, int x, int a) const { return Q_[idx(h, x, a)]; }
  double C(int h, int x, int a) const { return C_[idx(h, x, a)]; }
  int N(int h, int x, int a) const { return N_[idx(h, x, a)]; }

  std::span<const double> q_table() const { return Q_; }
  std::span<const double> c_table() const { return C_; }
  std::span<const int> n_table() const { return N_; }

  double Z = 0.0;
  double Cbar = 0.0;
  int episode_in_frame = 0;
  int frame = 1;

 private:
  std::size_t idx(int h, int x, int a) const {
    return (static_cast<std::size_t>(h - 1) * S_ + x) * A_ + a;
  }
  int H_;
  int S_;
  int A_;
  std::vector<double> Q_;
  std::vector<double> C_;
  std::vector<int> N_;
};

/// argmax_a Q_h(x,a) + (Z/eta) C_h(x,a), lowest index on ties.
int select_action(const TripleQState& st, int h, int x, double eta);

/// Increments N_h(x,a), then blends Q and C toward their optimistic targets.
/// x_next == kTerminal (after step H) bootstraps from zero.
void update_tables(TripleQState& st, int x, int a, double r, double g, int x_next, int h,
                   const TripleQParams& p);

/// Queue step with the realized frame length, then N <- 0, Q, C <- H.
void end_of_frame(TripleQState& st, const TripleQParams& p, double rho);

struct TripleQEpisode {
  int k = 0;
  double realized_return = 0.0;
  double realized_utility = 0.0;
  /// Exact values of the policy the learner committed to at episode start.
  double expected_return = 0.0;
  double expected_utility = 0.0;
  double Z = 0.0;
  int frame = 1;
};

struct TripleQOptions {
  int first_episode = 1;
  /// 0 runs through the last episode of the cmdp.
  int num_episodes = 0;
  /// Throws std::logic_error when an updated entry leaves [0, bound].
  bool check_bounds = false;
  /// Evaluate each episode's committed policy exactly (one backward pass).
  bool evaluate_policy = true;
  std::function<void(const TripleQEpisode&, const TripleQState&)> on_episode;
};

/// Runs the learner from a fresh state. eps is clamped to rho with a warning.
std::vector<TripleQEpisode> run_tripleq(const NonstationaryCmdp& cmdp, TripleQParams params,
                                        Rng& rng, const TripleQOptions& opts = {});

/// Metrics against per-episode oracle values (oracle[i] belongs to episode
/// first_episode + i). Uses the realized columns.
MetricsSeries to_metrics(std::span<const TripleQEpisode> episodes, std::span<const double> oracle,
                         double rho);

}  // namespace ncmdp

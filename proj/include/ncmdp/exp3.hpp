#pragma once

// Exp3 master used by the bandit-over-bandit wrappers: geometric candidate
// grids, log-space weights, and the constrained payoff shaping.

#include <span>
#include <vector>

#include "ncmdp/rng.hpp"

namespace ncmdp {

struct CandidateSet {
  int J = 0;
  double Delta = 1.0;
  /// base * W^{j/J} for j = 0..J.
  std::vector<double> values;
};

/// ceil(ln W), 0 for W <= 1.
int arm_count_exponent(int W);

/// {base * W^{j/J}}, j = 0..J with J = arm_count_exponent(W).
CandidateSet geometric_candidates(double base, int W);

/// Tabular grid: base = K^{1/3} / (Delta^{3/2} W) with
/// Delta = (40 sqrt(S A H^6 iota^3) / delta)^2 and iota at horizon K.
CandidateSet tabular_candidates(int K, int W, int S, int A, int H, double delta);

/// Same grid with a given Delta.
CandidateSet tabular_candidates_with_delta(int K, int W, double Delta);

/// min{1, sqrt((K/W) log(K/W) / ((e - 1) K H))}.
double exp3_gamma0(int K, int W, int H);

class Exp3State {
 public:
  Exp3State(int num_arms, double gamma0);

  int num_arms() const { return static_cast<int>(log_s_.size()); }
  double gamma0() const { return gamma0_; }
  std::span<const double> log_weights() const { return log_s_; }
  /// Weights normalized so the largest is 1.
  std::vector<double> weights() const;
  double& log_weight(int j) { return log_s_[j]; }

 private:
  std::vector<double> log_s_;
  double gamma0_;
};

/// p_j = (1 - gamma0) s_j / sum s + gamma0 / (J + 1).
std::vector<double> exp3_probs(const Exp3State& st);

int draw_arm(const Exp3State& st, Rng& rng);

/// s_arm <- s_arm * exp(gamma0 * rhat / (J + 1)); rhat must be nonnegative.
void exp3_update(Exp3State& st, int arm, double rhat);

/// Unweighted shaped payoff in [0, 1]: G/K^lambda, plus R when G >= W rho,
/// over W H (1 + 1/K^lambda).
double shaped_payoff(double R, double G, double W, int H, double rho, double K_lambda);

/// shaped_payoff / p_drawn (importance-weighted estimate for the drawn arm).
double shape_reward(double R, double G, double W, int H, double rho, int K, double lambda_exp,
                    double p_drawn);

}  // namespace ncmdp

#pragma once

// Bandit-over-bandit driver: an Exp3 master picks one arm per epoch, an inner
// learner runs the epoch from scratch, and the observed (R, G) feed back as a
// shaped payoff.

#include <functional>
#include <optional>
#include <vector>

#include "ncmdp/cmdp.hpp"
#include "ncmdp/exp3.hpp"
#include "ncmdp/metrics.hpp"
#include "ncmdp/tripleq.hpp"

namespace ncmdp {

struct EpochResult {
  double R = 0.0;
  double G = 0.0;
  std::vector<EpisodeRecord> episodes;
};

struct EpochRecord {
  int epoch = 0;
  int first_episode = 1;
  int length = 0;
  int arm = 0;
  double R = 0.0;
  double G = 0.0;
  /// Unweighted payoff in [0, 1] and its importance-weighted estimate.
  double payoff = 0.0;
  double rhat = 0.0;
  double p_drawn = 0.0;
  std::vector<double> probs;
};

/// Runs `arm` for `length` episodes starting at `first_episode`.
using EpochRunner = std::function<EpochResult(int arm, int first_episode, int length, Rng& rng)>;
/// Maps an epoch outcome to a payoff in [0, 1].
using EpochShaper = std::function<double(const EpochResult& result, int length)>;

struct BobRun {
  std::vector<EpochRecord> epochs;
  std::vector<EpisodeRecord> episodes;
  std::vector<double> final_probs;
};

/// Epochs of W episodes over K episodes; the last epoch absorbs the remainder
/// and is shorter.
BobRun run_bandit_over_bandit(int K, int W, int num_arms, double gamma0, const EpochRunner& runner,
                              const EpochShaper& shaper, Rng& rng);

struct DoubleRestartParams {
  int W = 0;               // 0: ceil(K^{5/9})
  double lambda_exp = 1.0 / 9.0;
  double delta = 0.0;      // Slater estimate; 0: take it from the cmdp
  std::optional<double> Delta;
  /// Replaces the theory grid when nonempty.
  std::vector<double> candidates;
  /// Applied to each inner learner's parameters after the defaults.
  std::function<void(TripleQParams&)> tune;
};

struct DoubleRestartRun {
  CandidateSet candidates;
  int W = 0;
  double gamma0 = 0.0;
  BobRun run;
};

/// Exp3 over candidate budgets with a fresh Triple-Q per epoch. Episode aux
/// columns: aux1 = arm, aux2 = B_i.
DoubleRestartRun run_double_restart(const NonstationaryCmdp& cmdp, const DoubleRestartParams& params,
                                    Rng& rng);

/// Inner-learner parameters for candidate budget B_i: defaults for W
/// episodes with b_tilde = B_i^{1-c} K^{alpha-1} at the full horizon K.
TripleQParams inner_tripleq_params(int K, int W, double B_i, int S, int A, int H);

}  // namespace ncmdp

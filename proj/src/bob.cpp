#include "ncmdp/bob.hpp"

#include <cmath>
#include <stdexcept>

namespace ncmdp {

BobRun run_bandit_over_bandit(int K, int W, int num_arms, double gamma0, const EpochRunner& runner,
                              const EpochShaper& shaper, Rng& rng) {
  if (W < 1 || W > K) throw std::invalid_argument("bandit_over_bandit: need 1 <= W <= K");
  Exp3State st(num_arms, gamma0);
  BobRun out;
  out.episodes.reserve(static_cast<std::size_t>(K));
  int epoch = 0;
  for (int first = 1; first <= K; first += W) {
    const int length = std::min(W, K - first + 1);
    EpochRecord rec;
    rec.epoch = ++epoch;
    rec.first_episode = first;
    rec.length = length;
    rec.probs = exp3_probs(st);
    // A single arm consumes no randomness.
    rec.arm = num_arms == 1 ? 0 : static_cast<int>(sample_index(rec.probs, rng));
    rec.p_drawn = rec.probs[rec.arm];
    auto result = runner(rec.arm, first, length, rng);
    if (static_cast<int>(result.episodes.size()) != length)
      throw std::logic_error("bandit_over_bandit: inner learner returned wrong episode count");
    rec.R = result.R;
    rec.G = result.G;
    rec.payoff = shaper(result, length);
    if (!(rec.p_drawn > 0.0)) throw std::logic_error("bandit_over_bandit: drawn arm has p <= 0");
    rec.rhat = rec.payoff / rec.p_drawn;
    exp3_update(st, rec.arm, rec.rhat);
    for (auto& e : result.episodes) out.episodes.push_back(e);
    out.epochs.push_back(std::move(rec));
  }
  out.final_probs = exp3_probs(st);
  return out;
}

TripleQParams inner_tripleq_params(int K, int W, double B_i, int S, int A, int H) {
  auto p = default_params(W, B_i, S, A, H);
  p.b_tilde = std::pow(B_i, 1.0 - p.c_exp) * std::pow(static_cast<double>(K), p.alpha_exp - 1.0);
  return p;
}

DoubleRestartRun run_double_restart(const NonstationaryCmdp& cmdp, const DoubleRestartParams& params,
                                    Rng& rng) {
  const int K = cmdp.episodes();
  const int H = cmdp.horizon();
  const int S = cmdp.num_states();
  const int A = cmdp.num_actions();
  DoubleRestartRun out;
  out.W = params.W > 0 ? params.W
                       : static_cast<int>(std::ceil(std::pow(static_cast<double>(K), 5.0 / 9.0)));
  out.W = std::min(out.W, K);
  if (!params.candidates.empty()) {
    out.candidates.values = params.candidates;
    out.candidates.J = static_cast<int>(params.candidates.size()) - 1;
  } else if (params.Delta) {
    out.candidates = tabular_candidates_with_delta(K, out.W, *params.Delta);
  } else {
    const double delta = params.delta > 0.0 ? params.delta : cmdp.slater_delta().value_or(0.0);
    if (!(delta > 0.0))
      throw std::invalid_argument("double_restart: no Slater estimate (set delta or Delta)");
    out.candidates = tabular_candidates(K, out.W, S, A, H, delta);
  }
  out.gamma0 = exp3_gamma0(K, out.W, H);
  const double rho = cmdp.rho();
  const double k_lambda = std::pow(static_cast<double>(K), params.lambda_exp);

  const auto& cands = out.candidates.values;
  EpochRunner runner = [&](int arm, int first, int length, Rng& r) {
    auto p = inner_tripleq_params(K, length, cands[arm], S, A, H);
    if (params.tune) params.tune(p);
    TripleQOptions opts;
    opts.first_episode = first;
    opts.num_episodes = length;
    const auto eps = run_tripleq(cmdp, p, r, opts);
    EpochResult res;
    res.episodes.reserve(eps.size());
    for (const auto& e : eps) {
      res.R += e.realized_return;
      res.G += e.realized_utility;
      res.episodes.push_back({e.k, e.realized_return, e.realized_utility, e.expected_return,
                              e.expected_utility, static_cast<double>(arm), cands[arm]});
    }
    return res;
  };
  EpochShaper shaper = [&](const EpochResult& res, int length) {
    return shaped_payoff(res.R, res.G, length, H, rho, k_lambda);
  };
  out.run = run_bandit_over_bandit(K, out.W, static_cast<int>(cands.size()), out.gamma0, runner,
                                   shaper, rng);
  return out;
}

}  // namespace ncmdp

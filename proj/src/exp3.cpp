#include "ncmdp/exp3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ncmdp {

int arm_count_exponent(int W) {
  if (W <= 1) return 0;
  return static_cast<int>(std::ceil(std::log(static_cast<double>(W)) - 1e-12));
}

CandidateSet geometric_candidates(double base, int W) {
  if (!(base > 0.0)) throw std::invalid_argument("geometric_candidates: base must be positive");
  CandidateSet c;
  c.J = arm_count_exponent(W);
  c.values.resize(static_cast<std::size_t>(c.J) + 1);
  for (int j = 0; j <= c.J; ++j)
    c.values[j] = c.J == 0 ? base : base * std::pow(static_cast<double>(W), double(j) / c.J);
  return c;
}

CandidateSet tabular_candidates_with_delta(int K, int W, double Delta) {
  if (!(Delta > 0.0)) throw std::invalid_argument("tabular_candidates: Delta must be positive");
  auto c = geometric_candidates(std::cbrt(static_cast<double>(K)) / (std::pow(Delta, 1.5) * W), W);
  c.Delta = Delta;
  return c;
}

CandidateSet tabular_candidates(int K, int W, int S, int A, int H, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("tabular_candidates: delta must be positive");
  const double iota = 128.0 * std::log(std::sqrt(2.0 * S * A * H) * K);
  const double root = 40.0 * std::sqrt(S * A * std::pow(H, 6) * std::pow(iota, 3)) / delta;
  return tabular_candidates_with_delta(K, W, root * root);
}

double exp3_gamma0(int K, int W, int H) {
  const double epochs = static_cast<double>(K) / W;
  if (epochs < 1.0) throw std::invalid_argument("exp3_gamma0: K/W must be >= 1");
  const double v = epochs * std::log(epochs) / ((std::numbers::e - 1.0) * K * H);
  return std::min(1.0, std::sqrt(v));
}

Exp3State::Exp3State(int num_arms, double gamma0) : log_s_(num_arms, 0.0), gamma0_(gamma0) {
  if (num_arms < 1) throw std::invalid_argument("Exp3State: need at least one arm");
  if (!(gamma0 >= 0.0 && gamma0 <= 1.0))
    throw std::invalid_argument("Exp3State: gamma0 must lie in [0, 1]");
}

std::vector<double> Exp3State::weights() const {
  const double m = *std::max_element(log_s_.begin(), log_s_.end());
  std::vector<double> w(log_s_.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(log_s_[j] - m);
  return w;
}

std::vector<double> exp3_probs(const Exp3State& st) {
  auto p = st.weights();
  double sum = 0.0;
  for (double w : p) sum += w;
  const double n = static_cast<double>(p.size());
  const double g = st.gamma0();
  for (double& v : p) v = (1.0 - g) * v / sum + g / n;
  return p;
}

int draw_arm(const Exp3State& st, Rng& rng) {
  const auto p = exp3_probs(st);
  return static_cast<int>(sample_index(p, rng));
}

void exp3_update(Exp3State& st, int arm, double rhat) {
  if (arm < 0 || arm >= st.num_arms()) throw std::out_of_range("exp3_update: arm out of range");
  if (!(rhat >= 0.0)) throw std::invalid_argument("exp3_update: reward estimate must be >= 0");
  st.log_weight(arm) += st.gamma0() * rhat / st.num_arms();
}

double shaped_payoff(double R, double G, double W, int H, double rho, double K_lambda) {
  const double num = G < W * rho ? G / K_lambda : R + G / K_lambda;
  return num / (W * H * (1.0 + 1.0 / K_lambda));
}

double shape_reward(double R, double G, double W, int H, double rho, int K, double lambda_exp,
                    double p_drawn) {
  if (!(p_drawn > 0.0)) throw std::logic_error("shape_reward: drawn arm has probability <= 0");
  const double kl = std::pow(static_cast<double>(K), lambda_exp);
  return shaped_payoff(R, G, W, H, rho, kl) / p_drawn;
}

}  // namespace ncmdp

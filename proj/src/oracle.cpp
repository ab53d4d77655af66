#include "ncmdp/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <omp.h>

namespace ncmdp {

namespace {

constexpr double kTieTol = 1e-12;
constexpr double kFeasTol = 1e-12;
constexpr int kMaxIterations = 200;
constexpr double kDualChangeTol = 1e-10;

struct Weights {
  double reward;
  double utility;
  bool prefer_utility;  // secondary criterion on ties
};

DeterministicPolicy backward_induction(std::span<const StageModel> stages,
                                       std::span<const double> mu0, Weights w) {
  const int H = static_cast<int>(stages.size());
  const int S = stages.front().num_states();
  const int A = stages.front().num_actions();
  DeterministicPolicy out;
  out.actions.assign(static_cast<std::size_t>(H) * S, 0);
  std::vector<double> vr(S, 0.0), vg(S, 0.0), nr(S), ng(S);
  for (int h = H; h >= 1; --h) {
    const auto& st = stages[h - 1];
    for (int x = 0; x < S; ++x) {
      int best = 0;
      double best_c = -std::numeric_limits<double>::infinity();
      double best_r = 0.0, best_g = 0.0;
      for (int a = 0; a < A; ++a) {
        double qr = st.reward(x, a), qg = st.utility(x, a);
        for (const auto& e : st.row(x, a)) {
          qr += e.prob * vr[e.next];
          qg += e.prob * vg[e.next];
        }
        const double c = w.reward * qr + w.utility * qg;
        const double scale = kTieTol * (1.0 + std::abs(best_c));
        bool take = false;
        if (a == 0 || c > best_c + scale) {
          take = true;
        } else if (c >= best_c - scale) {
          take = w.prefer_utility ? qg > best_g + kTieTol : qr > best_r + kTieTol;
        }
        if (take) {
          best = a;
          best_c = c;
          best_r = qr;
          best_g = qg;
        }
      }
      out.actions[static_cast<std::size_t>(h - 1) * S + x] = best;
      nr[x] = best_r;
      ng[x] = best_g;
    }
    std::swap(vr, nr);
    std::swap(vg, ng);
  }
  for (int x = 0; x < S; ++x) {
    out.value.reward += mu0[x] * vr[x];
    out.value.utility += mu0[x] * vg[x];
  }
  return out;
}

double line(const PolicyValue& v, double threshold, double lambda) {
  return v.reward + lambda * (v.utility - threshold);
}

}  // namespace

OccupancyMeasure::OccupancyMeasure(int horizon, int num_states, int num_actions,
                                   std::vector<double> q)
    : H_(horizon), S_(num_states), A_(num_actions), q_(std::move(q)) {
  if (q_.size() != static_cast<std::size_t>(H_) * S_ * A_)
    throw std::invalid_argument("occupancy: expected H*S*A entries");
}

double OccupancyMeasure::constraint_residual(std::span<const StageModel> stages,
                                             std::span<const double> mu0) const {
  double worst = 0.0;
  std::vector<double> inflow(S_);
  for (int h = 1; h <= H_; ++h) {
    double total = 0.0;
    for (int x = 0; x < S_; ++x) {
      double mass = 0.0;
      for (int a = 0; a < A_; ++a) {
        worst = std::max(worst, -at(h, x, a));
        mass += at(h, x, a);
      }
      total += mass;
      const double expected = h == 1 ? mu0[x] : inflow[x];
      worst = std::max(worst, std::abs(mass - expected));
    }
    worst = std::max(worst, std::abs(total - 1.0));
    std::fill(inflow.begin(), inflow.end(), 0.0);
    for (int x = 0; x < S_; ++x)
      for (int a = 0; a < A_; ++a)
        for (const auto& e : stages[h - 1].row(x, a)) inflow[e.next] += e.prob * at(h, x, a);
  }
  return worst;
}

double OccupancyMeasure::expected_reward(std::span<const StageModel> stages) const {
  double v = 0.0;
  for (int h = 1; h <= H_; ++h)
    for (int x = 0; x < S_; ++x)
      for (int a = 0; a < A_; ++a) v += at(h, x, a) * stages[h - 1].reward(x, a);
  return v;
}

double OccupancyMeasure::expected_utility(std::span<const StageModel> stages) const {
  double v = 0.0;
  for (int h = 1; h <= H_; ++h)
    for (int x = 0; x < S_; ++x)
      for (int a = 0; a < A_; ++a) v += at(h, x, a) * stages[h - 1].utility(x, a);
  return v;
}

OccupancyMeasure occupancy_measure(std::span<const StageModel> stages,
                                   std::span<const double> mu0, const StochasticPolicy& pi) {
  const int H = pi.horizon(), S = pi.num_states(), A = pi.num_actions();
  std::vector<double> q(static_cast<std::size_t>(H) * S * A, 0.0);
  std::vector<double> state_mass(mu0.begin(), mu0.end()), next(S);
  for (int h = 1; h <= H; ++h) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int x = 0; x < S; ++x) {
      const auto p = pi.at(h, x);
      for (int a = 0; a < A; ++a) {
        const double w = state_mass[x] * p[a];
        q[(static_cast<std::size_t>(h - 1) * S + x) * A + a] = w;
        if (w == 0.0) continue;
        for (const auto& e : stages[h - 1].row(x, a)) next[e.next] += w * e.prob;
      }
    }
    std::swap(state_mass, next);
  }
  return OccupancyMeasure(H, S, A, std::move(q));
}

DeterministicPolicy lagrangian_best_response(std::span<const StageModel> stages,
                                             std::span<const double> mu0, double lambda) {
  return backward_induction(stages, mu0, {1.0, lambda, true});
}

DeterministicPolicy max_utility_policy(std::span<const StageModel> stages,
                                       std::span<const double> mu0) {
  return backward_induction(stages, mu0, {0.0, 1.0, false});
}

double lagrangian_dual(std::span<const StageModel> stages, std::span<const double> mu0,
                       double threshold, double lambda) {
  return line(lagrangian_best_response(stages, mu0, lambda).value, threshold, lambda);
}

// The dual d(lambda) is the upper envelope of one line per deterministic
// policy. The search keeps a bracket of two policies: `low` is infeasible
// (negative slope) and `high` feasible (nonnegative slope). The next trial
// point is the crossing of their lines, which always lies strictly inside
// the current lambda bracket; when the best response there does not rise
// above the crossing, both bracket policies are optimal at that lambda and
// their occupancy mixture hitting the threshold is the LP optimum.
OracleResult solve_episode(std::span<const StageModel> stages, std::span<const double> mu0,
                           double threshold) {
  OracleResult res;
  auto low = lagrangian_best_response(stages, mu0, 0.0);
  if (low.value.utility >= threshold - kFeasTol) {
    res.optimal_value = low.value.reward;
    res.optimal_utility = low.value.utility;
    res.dual_lambda = 0.0;
    res.feasible = true;
    res.first = std::move(low.actions);
    res.second = res.first;
    return res;
  }
  auto high = max_utility_policy(stages, mu0);
  if (high.value.utility < threshold - kFeasTol) {
    res.optimal_value = std::numeric_limits<double>::quiet_NaN();
    res.optimal_utility = high.value.utility;
    res.feasible = false;
    return res;
  }
  const double slack = high.value.utility - threshold;
  const double H = static_cast<double>(stages.size());
  const double lambda_cap = slack > 0.0 ? 2.0 * H / slack : std::numeric_limits<double>::infinity();

  double lambda = 0.0;
  double prev_dual = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const double denom = high.value.utility - low.value.utility;
    lambda = (low.value.reward - high.value.reward) / denom;
    lambda = std::max(lambda, 0.0);
    if (lambda > lambda_cap * (1.0 + 1e-9))
      throw std::logic_error("oracle: dual minimizer outside the [0, 2H/slack] bracket");
    const double crossing = line(low.value, threshold, lambda);
    auto probe = lagrangian_best_response(stages, mu0, lambda);
    const double dual = line(probe.value, threshold, lambda);
    if (dual < crossing - 1e-9 * (1.0 + std::abs(crossing)))
      throw std::logic_error("oracle: best response below the bracket lines");
    const bool converged = dual <= crossing + kTieTol * (1.0 + std::abs(crossing)) ||
                           std::abs(prev_dual - dual) < kDualChangeTol;
    prev_dual = dual;
    if (converged) break;
    if (probe.value.utility >= threshold)
      high = std::move(probe);
    else
      low = std::move(probe);
  }
  const double denom = high.value.utility - low.value.utility;
  const double w = (high.value.utility - threshold) / denom;
  res.weight = std::clamp(w, 0.0, 1.0);
  res.optimal_value = res.weight * low.value.reward + (1.0 - res.weight) * high.value.reward;
  res.optimal_utility = res.weight * low.value.utility + (1.0 - res.weight) * high.value.utility;
  res.dual_lambda = lambda;
  res.feasible = true;
  res.iterations = it + 1;
  res.first = std::move(low.actions);
  res.second = std::move(high.actions);
  return res;
}

OracleResult optimal_value(const NonstationaryCmdp& cmdp, int k) {
  return tightened_optimal(cmdp, k, 0.0);
}

OracleResult tightened_optimal(const NonstationaryCmdp& cmdp, int k, double eps) {
  if (eps < 0.0) throw std::invalid_argument("tightened_optimal: eps must be nonnegative");
  const auto stages = cmdp.episode(k);
  return solve_episode(stages, cmdp.mu0(), cmdp.rho() + eps);
}

std::vector<OracleResult> sweep_optimal_values(const NonstationaryCmdp& cmdp, double eps) {
  const int K = cmdp.episodes();
  std::vector<OracleResult> out(K);
#pragma omp parallel for schedule(dynamic, 16)
  for (int k = 1; k <= K; ++k) out[k - 1] = tightened_optimal(cmdp, k, eps);
  return out;
}

std::vector<OracleResult> sweep_optimal_values_serial(const NonstationaryCmdp& cmdp,
                                                      double eps) {
  std::vector<OracleResult> out;
  out.reserve(cmdp.episodes());
  for (int k = 1; k <= cmdp.episodes(); ++k) out.push_back(tightened_optimal(cmdp, k, eps));
  return out;
}

StochasticPolicy mixture_policy(std::span<const StageModel> stages, std::span<const double> mu0,
                                const OracleResult& result) {
  const int H = static_cast<int>(stages.size());
  const int S = stages.front().num_states();
  const int A = stages.front().num_actions();
  if (!result.feasible) throw std::invalid_argument("mixture_policy: infeasible result");
  const auto q1 = occupancy_measure(stages, mu0, StochasticPolicy::deterministic(H, S, A, result.first));
  const auto q2 = occupancy_measure(stages, mu0, StochasticPolicy::deterministic(H, S, A, result.second));
  std::vector<double> probs(static_cast<std::size_t>(H) * S * A, 0.0);
  for (int h = 1; h <= H; ++h) {
    for (int x = 0; x < S; ++x) {
      double mass = 0.0;
      double* p = probs.data() + (static_cast<std::size_t>(h - 1) * S + x) * A;
      for (int a = 0; a < A; ++a) {
        p[a] = result.weight * q1.at(h, x, a) + (1.0 - result.weight) * q2.at(h, x, a);
        mass += p[a];
      }
      if (mass > 0.0) {
        for (int a = 0; a < A; ++a) p[a] /= mass;
      } else {
        std::fill(p, p + A, 0.0);
        p[result.first[static_cast<std::size_t>(h - 1) * S + x]] = 1.0;
      }
    }
  }
  return StochasticPolicy(H, S, A, std::move(probs));
}

}  // namespace ncmdp

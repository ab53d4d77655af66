#include "ncmdp/cmdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ncmdp {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ModelError(what);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0 && std::isfinite(v); }

// L1 distance between two sparse rows sorted by `next`.
double l1_distance(std::span<const KernelEntry> p, std::span<const KernelEntry> q) {
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < p.size() || j < q.size()) {
    if (j == q.size() || (i < p.size() && p[i].next < q[j].next)) {
      d += p[i++].prob;
    } else if (i == p.size() || q[j].next < p[i].next) {
      d += q[j++].prob;
    } else {
      d += std::abs(p[i++].prob - q[j++].prob);
    }
  }
  return d;
}

bool by_next(const KernelEntry& l, const KernelEntry& r) { return l.next < r.next; }

}  // namespace

StageModel::StageModel(int h, int num_states, int num_actions,
                       std::vector<std::vector<KernelEntry>> rows,
                       std::vector<double> reward, std::vector<double> utility)
    : h_(h),
      num_states_(num_states),
      num_actions_(num_actions),
      reward_(std::move(reward)),
      utility_(std::move(utility)) {
  require(num_states > 0 && num_actions > 0, "stage: empty state or action space");
  const auto pairs = static_cast<std::size_t>(num_states) * num_actions;
  require(rows.size() == pairs, "stage: expected one kernel row per (state, action)");
  require(reward_.size() == pairs && utility_.size() == pairs,
          "stage: reward/utility tables must have S*A entries");
  offsets_.reserve(pairs + 1);
  offsets_.push_back(0);
  for (std::size_t i = 0; i < pairs; ++i) {
    auto& row = rows[i];
    std::sort(row.begin(), row.end(),
              [](const KernelEntry& l, const KernelEntry& r) { return l.next < r.next; });
    double sum = 0.0;
    int prev = -1;
    for (const auto& e : row) {
      require(e.next >= 0 && e.next < num_states, "stage: kernel entry outside state space");
      require(e.next != prev, "stage: duplicate kernel entry");
      require(e.prob >= 0.0 && std::isfinite(e.prob), "stage: negative kernel entry");
      prev = e.next;
      sum += e.prob;
      if (e.prob > 0.0) entries_.push_back(e);
    }
    if (std::abs(sum - 1.0) > kProbTol)
      throw ModelError("stage h=" + std::to_string(h) + ": kernel row " + std::to_string(i) +
                       " sums to " + std::to_string(sum));
    require(in_unit(reward_[i]), "stage: reward outside [0,1]");
    require(in_unit(utility_[i]), "stage: utility outside [0,1]");
    offsets_.push_back(entries_.size());
  }
}

StageModel StageModel::from_dense(int h, int num_states, int num_actions,
                                  std::span<const double> kernel, std::vector<double> reward,
                                  std::vector<double> utility) {
  const auto S = static_cast<std::size_t>(num_states);
  require(kernel.size() == S * num_actions * S, "stage: dense kernel must have S*A*S entries");
  std::vector<std::vector<KernelEntry>> rows(S * num_actions);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t n = 0; n < S; ++n) {
      const double p = kernel[i * S + n];
      require(p >= 0.0, "stage: negative kernel entry");
      if (p > 0.0) rows[i].push_back({static_cast<int>(n), p});
    }
  }
  return StageModel(h, num_states, num_actions, std::move(rows), std::move(reward),
                    std::move(utility));
}

double StageModel::prob(int x, int a, int next) const {
  for (const auto& e : row(x, a))
    if (e.next == next) return e.prob;
  return 0.0;
}

MaterializedStages::MaterializedStages(std::vector<std::vector<StageModel>> stages)
    : stages_(std::move(stages)) {}

void MaterializedStages::kernel_row(int k, int h, int x, int a,
                                    std::vector<KernelEntry>& out) const {
  const auto r = at(k, h).row(x, a);
  out.assign(r.begin(), r.end());
}

NonstationaryCmdp::NonstationaryCmdp(int num_states, int num_actions, int horizon,
                                     int episodes, std::vector<double> mu0, double rho,
                                     std::optional<double> slater_delta,
                                     std::shared_ptr<const StageSource> source)
    : S_(num_states),
      A_(num_actions),
      H_(horizon),
      K_(episodes),
      mu0_(std::move(mu0)),
      rho_(rho),
      slater_delta_(slater_delta),
      source_(std::move(source)) {
  require(S_ > 0 && A_ > 0 && H_ > 0 && K_ > 0, "cmdp: dimensions must be positive");
  require(source_ != nullptr, "cmdp: missing stage source");
  require(mu0_.size() == static_cast<std::size_t>(S_), "cmdp: mu0 must have S entries");
  double sum = 0.0;
  for (double p : mu0_) {
    require(p >= 0.0, "cmdp: mu0 has a negative entry");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= kProbTol, "cmdp: mu0 does not sum to 1");
  require(rho_ >= 0.0 && rho_ <= H_, "cmdp: rho must lie in [0, H]");
  require(!slater_delta_ || *slater_delta_ > 0.0, "cmdp: Slater margin must be positive");
}

NonstationaryCmdp NonstationaryCmdp::materialized(std::vector<std::vector<StageModel>> stages,
                                                  std::vector<double> mu0, double rho,
                                                  std::optional<double> slater_delta) {
  require(!stages.empty() && !stages.front().empty(), "cmdp: no stages");
  const int K = static_cast<int>(stages.size());
  const int H = static_cast<int>(stages.front().size());
  const int S = stages.front().front().num_states();
  const int A = stages.front().front().num_actions();
  for (const auto& ep : stages) {
    require(static_cast<int>(ep.size()) == H, "cmdp: every episode needs exactly H stages");
    for (std::size_t h = 0; h < ep.size(); ++h) {
      require(ep[h].num_states() == S && ep[h].num_actions() == A,
              "cmdp: stage dimensions differ");
      require(ep[h].step_index() == static_cast<int>(h) + 1, "cmdp: stage step index mismatch");
    }
  }
  return NonstationaryCmdp(S, A, H, K, std::move(mu0), rho, slater_delta,
                           std::make_shared<MaterializedStages>(std::move(stages)));
}

void NonstationaryCmdp::check_episode(int k) const {
  if (k < 1 || k > K_) throw std::out_of_range("episode index " + std::to_string(k));
}

void NonstationaryCmdp::check_step(int k, int h) const {
  check_episode(k);
  if (h < 1 || h > H_) throw std::out_of_range("step index " + std::to_string(h));
}

StageModel NonstationaryCmdp::stage(int k, int h) const {
  check_step(k, h);
  return source_->stage(k, h);
}

std::vector<StageModel> NonstationaryCmdp::episode(int k) const {
  check_episode(k);
  std::vector<StageModel> out;
  out.reserve(H_);
  for (int h = 1; h <= H_; ++h) out.push_back(source_->stage(k, h));
  return out;
}

NonstationaryCmdp NonstationaryCmdp::with_rho(double rho) const {
  NonstationaryCmdp copy = *this;
  require(rho >= 0.0 && rho <= H_, "cmdp: rho must lie in [0, H]");
  copy.rho_ = rho;
  return copy;
}

StochasticPolicy::StochasticPolicy(int horizon, int num_states, int num_actions,
                                   std::vector<double> probs)
    : H_(horizon), S_(num_states), A_(num_actions), probs_(std::move(probs)) {
  require(probs_.size() == static_cast<std::size_t>(H_) * S_ * A_,
          "policy: expected H*S*A probabilities");
  for (std::size_t i = 0; i < probs_.size(); i += A_) {
    double sum = 0.0;
    for (int a = 0; a < A_; ++a) {
      require(probs_[i + a] >= 0.0, "policy: negative action probability");
      sum += probs_[i + a];
    }
    require(std::abs(sum - 1.0) <= kProbTol, "policy: action distribution does not sum to 1");
  }
}

StochasticPolicy StochasticPolicy::uniform(int horizon, int num_states, int num_actions) {
  return StochasticPolicy(horizon, num_states, num_actions,
                          std::vector<double>(static_cast<std::size_t>(horizon) * num_states *
                                                  num_actions,
                                              1.0 / num_actions));
}

StochasticPolicy StochasticPolicy::deterministic(int horizon, int num_states, int num_actions,
                                                 std::span<const int> actions) {
  require(actions.size() == static_cast<std::size_t>(horizon) * num_states,
          "policy: expected H*S actions");
  std::vector<double> probs(actions.size() * num_actions, 0.0);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    require(actions[i] >= 0 && actions[i] < num_actions, "policy: action out of range");
    probs[i * num_actions + actions[i]] = 1.0;
  }
  return StochasticPolicy(horizon, num_states, num_actions, std::move(probs));
}

int sample_initial(const NonstationaryCmdp& cmdp, Rng& rng) {
  return sample_index(cmdp.mu0(), rng);
}

StepResult step(const NonstationaryCmdp& cmdp, int k, int h, int x, int a, Rng& rng) {
  cmdp.check_step(k, h);
  if (x < 0 || x >= cmdp.num_states() || a < 0 || a >= cmdp.num_actions())
    throw std::out_of_range("state or action index");
  const auto& src = cmdp.source();
  StepResult out{kTerminal, src.reward(k, h, x, a), src.utility(k, h, x, a)};
  if (h == cmdp.horizon()) return out;
  thread_local std::vector<KernelEntry> row;
  src.kernel_row(k, h, x, a, row);
  const double u = uniform01(rng);
  double acc = 0.0;
  out.next_state = row.back().next;
  for (const auto& e : row) {
    acc += e.prob;
    if (u < acc) {
      out.next_state = e.next;
      break;
    }
  }
  return out;
}

PolicyValue policy_value(std::span<const StageModel> stages, std::span<const double> mu0,
                         const StochasticPolicy& pi) {
  const int H = static_cast<int>(stages.size());
  const int S = stages.front().num_states();
  const int A = stages.front().num_actions();
  require(pi.horizon() == H && pi.num_states() == S && pi.num_actions() == A,
          "policy_value: policy dimensions do not match the model");
  std::vector<double> vr(S, 0.0), vg(S, 0.0), nr(S), ng(S);
  for (int h = H; h >= 1; --h) {
    const auto& st = stages[h - 1];
    for (int x = 0; x < S; ++x) {
      const auto p = pi.at(h, x);
      double sr = 0.0, sg = 0.0;
      for (int a = 0; a < A; ++a) {
        if (p[a] == 0.0) continue;
        double qr = st.reward(x, a), qg = st.utility(x, a);
        for (const auto& e : st.row(x, a)) {
          qr += e.prob * vr[e.next];
          qg += e.prob * vg[e.next];
        }
        sr += p[a] * qr;
        sg += p[a] * qg;
      }
      nr[x] = sr;
      ng[x] = sg;
    }
    std::swap(vr, nr);
    std::swap(vg, ng);
  }
  PolicyValue out;
  for (int x = 0; x < S; ++x) {
    out.reward += mu0[x] * vr[x];
    out.utility += mu0[x] * vg[x];
  }
  return out;
}

// Reads only the rows the policy can reach through the source, which is much
// cheaper than materializing the episode when the policy is deterministic.
PolicyValue policy_value(const NonstationaryCmdp& cmdp, int k, const StochasticPolicy& pi) {
  cmdp.check_episode(k);
  const int H = cmdp.horizon(), S = cmdp.num_states(), A = cmdp.num_actions();
  require(pi.horizon() == H && pi.num_states() == S && pi.num_actions() == A,
          "policy_value: policy dimensions do not match the model");
  const auto& src = cmdp.source();
  std::vector<double> vr(S, 0.0), vg(S, 0.0), nr(S), ng(S);
  std::vector<KernelEntry> row;
  for (int h = H; h >= 1; --h) {
    for (int x = 0; x < S; ++x) {
      const auto p = pi.at(h, x);
      double sr = 0.0, sg = 0.0;
      for (int a = 0; a < A; ++a) {
        if (p[a] == 0.0) continue;
        double qr = src.reward(k, h, x, a), qg = src.utility(k, h, x, a);
        src.kernel_row(k, h, x, a, row);
        std::sort(row.begin(), row.end(), by_next);
        for (const auto& e : row) {
          qr += e.prob * vr[e.next];
          qg += e.prob * vg[e.next];
        }
        sr += p[a] * qr;
        sg += p[a] * qg;
      }
      nr[x] = sr;
      ng[x] = sg;
    }
    std::swap(vr, nr);
    std::swap(vg, ng);
  }
  PolicyValue out;
  for (int x = 0; x < S; ++x) {
    out.reward += cmdp.mu0()[x] * vr[x];
    out.utility += cmdp.mu0()[x] * vg[x];
  }
  return out;
}

Trajectory rollout(const NonstationaryCmdp& cmdp, int k, const StochasticPolicy& pi, Rng& rng) {
  Trajectory traj;
  traj.k = k;
  int x = sample_initial(cmdp, rng);
  for (int h = 1; h <= cmdp.horizon(); ++h) {
    const int a = sample_index(pi.at(h, x), rng);
    const auto res = step(cmdp, k, h, x, a, rng);
    traj.steps.push_back({x, a, res.reward, res.utility});
    traj.total_return += res.reward;
    traj.total_utility += res.utility;
    x = res.next_state;
  }
  return traj;
}

VariationBudgets variation_budgets(const NonstationaryCmdp& cmdp, int first, int last) {
  cmdp.check_episode(first);
  cmdp.check_episode(last);
  VariationBudgets b;
  const int S = cmdp.num_states(), A = cmdp.num_actions(), H = cmdp.horizon();
  if (first >= last) return b;
  // Read the source directly: building full stage models per episode would
  // dominate the cost for long runs.
  const auto& src = cmdp.source();
  std::vector<KernelEntry> prev_row, next_row;
  for (int k = first; k < last; ++k) {
    for (int h = 1; h <= H; ++h) {
      double mr = 0.0, mg = 0.0, mp = 0.0;
      for (int x = 0; x < S; ++x) {
        for (int a = 0; a < A; ++a) {
          mr = std::max(mr, std::abs(src.reward(k, h, x, a) - src.reward(k + 1, h, x, a)));
          mg = std::max(mg, std::abs(src.utility(k, h, x, a) - src.utility(k + 1, h, x, a)));
          src.kernel_row(k, h, x, a, prev_row);
          src.kernel_row(k + 1, h, x, a, next_row);
          std::sort(prev_row.begin(), prev_row.end(), by_next);
          std::sort(next_row.begin(), next_row.end(), by_next);
          mp = std::max(mp, l1_distance(prev_row, next_row));
        }
      }
      b.reward += mr;
      b.utility += mg;
      b.kernel += mp;
    }
  }
  return b;
}

VariationBudgets variation_budgets(const NonstationaryCmdp& cmdp) {
  return variation_budgets(cmdp, 1, cmdp.episodes());
}

}  // namespace ncmdp

#include "ncmdp/tripleq.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ncmdp/log.hpp"

namespace ncmdp {

namespace {

// ceil that ignores floating noise just above an integer.
int safe_ceil(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) <= 1e-9 * std::max(1.0, std::abs(v))) return static_cast<int>(r);
  return static_cast<int>(std::ceil(v));
}

}  // namespace

TripleQParams default_params(int K, double B, int S, int A, int H) {
  if (K < 1) throw std::invalid_argument("default_params: K must be >= 1");
  if (S < 1 || A < 1 || H < 1) throw std::invalid_argument("default_params: bad dimensions");
  const double b = B > 0.0 ? B : 1.0;
  const double k = K;
  TripleQParams p;
  p.eta = std::pow(k, 0.2) * std::cbrt(b);
  p.chi = std::pow(k, 0.2);
  p.iota = 128.0 * std::log(std::sqrt(2.0 * S * A * H) * k);
  p.eps = 8.0 * std::sqrt(S * A * std::pow(H, 6) * std::pow(p.iota, 3)) * std::cbrt(b) /
          std::pow(k, 0.2);
  p.b_tilde = std::pow(b, 1.0 - p.c_exp) * std::pow(k, p.alpha_exp - 1.0);
  // Frames longer than the run behave like a single frame.
  const double frame = std::pow(k, p.alpha_exp) / std::pow(b, p.c_exp);
  p.frame_len = frame >= k ? K : std::max(1, safe_ceil(frame));
  return p;
}

TripleQParams stationary_params(int K, int S, int A, int H) {
  auto p = default_params(K, 1.0, S, A, H);
  p.frame_len = K;
  p.b_tilde = 0.0;
  return p;
}

TripleQParams unconstrained_params(int K, double B, int S, int A, int H) {
  auto p = default_params(K, B, S, A, H);
  p.use_queue = false;
  return p;
}

double learning_rate(int t, double chi) {
  if (t < 1) throw std::invalid_argument("learning_rate: visit count must be >= 1");
  return (chi + 1.0) / (chi + t);
}

double hoeffding_bonus(int t, double chi, int H, double iota) {
  if (t < 1) throw std::invalid_argument("hoeffding_bonus: visit count must be >= 1");
  return 0.25 * std::sqrt(static_cast<double>(H) * H * iota * (chi + 1.0) / (chi + t));
}

double q_upper_bound(const TripleQParams& p, int H) {
  return static_cast<double>(H) * H * (std::sqrt(p.iota) + 2.0 * p.b_tilde);
}

TripleQState::TripleQState(int horizon, int num_states, int num_actions)
    : H_(horizon), S_(num_states), A_(num_actions) {
  if (H_ < 1 || S_ < 1 || A_ < 1) throw std::invalid_argument("TripleQState: bad dimensions");
  const auto n = static_cast<std::size_t>(H_) * S_ * A_;
  Q_.assign(n, static_cast<double>(H_));
  C_.assign(n, static_cast<double>(H_));
  N_.assign(n, 0);
}

int select_action(const TripleQState& st, int h, int x, double eta) {
  const double w = st.Z / eta;
  int best = 0;
  double best_v = st.Q(h, x, 0) + w * st.C(h, x, 0);
  for (int a = 1; a < st.num_actions(); ++a) {
    const double v = st.Q(h, x, a) + w * st.C(h, x, a);
    if (v > best_v) {
      best_v = v;
      best = a;
    }
  }
  return best;
}

void update_tables(TripleQState& st, int x, int a, double r, double g, int x_next, int h,
                   const TripleQParams& p) {
  const int H = st.horizon();
  const int t = ++st.N(h, x, a);
  const double lr = learning_rate(t, p.chi);
  const double bonus = p.bonus_scale * hoeffding_bonus(t, p.chi, H, p.iota) + 2.0 * H * p.b_tilde;
  double v_next = 0.0;
  double w_next = 0.0;
  if (h < H && x_next != kTerminal) {
    const int a_next = select_action(st, h + 1, x_next, p.eta);
    v_next = st.Q(h + 1, x_next, a_next);
    w_next = st.C(h + 1, x_next, a_next);
  }
  double& q = st.Q(h, x, a);
  double& c = st.C(h, x, a);
  q = (1.0 - lr) * q + lr * (r + v_next + bonus);
  c = (1.0 - lr) * c + lr * (g + w_next + bonus);
}

void end_of_frame(TripleQState& st, const TripleQParams& p, double rho) {
  if (p.use_queue && st.episode_in_frame > 0)
    st.Z = std::max(0.0, st.Z + rho + p.eps - st.Cbar / st.episode_in_frame);
  const int H = st.horizon();
  for (int h = 1; h <= H; ++h)
    for (int x = 0; x < st.num_states(); ++x)
      for (int a = 0; a < st.num_actions(); ++a) {
        st.N(h, x, a) = 0;
        st.Q(h, x, a) = H;
        st.C(h, x, a) = H;
      }
  st.Cbar = 0.0;
  st.episode_in_frame = 0;
  ++st.frame;
}

std::vector<TripleQEpisode> run_tripleq(const NonstationaryCmdp& cmdp, TripleQParams params,
                                        Rng& rng, const TripleQOptions& opts) {
  const int H = cmdp.horizon();
  const int S = cmdp.num_states();
  const int A = cmdp.num_actions();
  const int first = opts.first_episode;
  const int last = opts.num_episodes > 0 ? first + opts.num_episodes - 1 : cmdp.episodes();
  cmdp.check_episode(first);
  cmdp.check_episode(last);
  if (params.frame_len < 1) throw std::invalid_argument("run_tripleq: frame_len must be >= 1");
  if (params.eps > cmdp.rho()) {
    std::ostringstream msg;
    msg << "tripleq: eps " << params.eps << " exceeds rho " << cmdp.rho() << "; clamped to rho";
    warn(msg.str());
    params.eps = cmdp.rho();
  }
  const double bound = q_upper_bound(params, H);
  const auto check = [&](const TripleQState& st, int h, int x, int a) {
    const double q = st.Q(h, x, a);
    const double c = st.C(h, x, a);
    const double tol = 1e-12 * bound;
    if (!(q >= -tol && q <= bound + tol && c >= -tol && c <= bound + tol)) {
      std::ostringstream msg;
      msg << "tripleq: table entry outside [0, " << bound << "] at h=" << h << " x=" << x
          << " a=" << a << " (Q=" << q << ", C=" << c << ")";
      throw std::logic_error(msg.str());
    }
  };

  TripleQState st(H, S, A);
  std::vector<TripleQEpisode> out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  std::vector<int> actions(static_cast<std::size_t>(H) * S);
  for (int k = first; k <= last; ++k) {
    TripleQEpisode ep;
    ep.k = k;
    ep.Z = st.Z;
    ep.frame = st.frame;
    if (opts.evaluate_policy) {
      for (int h = 1; h <= H; ++h)
        for (int x = 0; x < S; ++x)
          actions[static_cast<std::size_t>(h - 1) * S + x] = select_action(st, h, x, params.eta);
      const auto v = policy_value(cmdp, k, StochasticPolicy::deterministic(H, S, A, actions));
      ep.expected_return = v.reward;
      ep.expected_utility = v.utility;
    }
    int x = sample_initial(cmdp, rng);
    for (int h = 1; h <= H; ++h) {
      const int a = select_action(st, h, x, params.eta);
      const auto res = step(cmdp, k, h, x, a, rng);
      update_tables(st, x, a, res.reward, res.utility, res.next_state, h, params);
      if (opts.check_bounds) check(st, h, x, a);
      if (h == 1) st.Cbar += st.C(1, x, a);
      ep.realized_return += res.reward;
      ep.realized_utility += res.utility;
      x = res.next_state;
    }
    ++st.episode_in_frame;
    if (opts.on_episode) opts.on_episode(ep, st);
    out.push_back(ep);
    if (st.episode_in_frame == params.frame_len && k < last) {
      end_of_frame(st, params, cmdp.rho());
      if (!(st.Z >= 0.0)) throw std::logic_error("tripleq: virtual queue went negative");
    }
  }
  return out;
}

MetricsSeries to_metrics(std::span<const TripleQEpisode> episodes, std::span<const double> oracle,
                         double rho) {
  if (oracle.size() != episodes.size())
    throw std::invalid_argument("to_metrics: oracle length differs from episode count");
  MetricsSeries m(rho);
  for (std::size_t i = 0; i < episodes.size(); ++i)
    m.accumulate(episodes[i].k, episodes[i].realized_return, episodes[i].realized_utility,
                 oracle[i]);
  return m;
}

}  // namespace ncmdp

#include "ncmdp/linear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ncmdp/envs.hpp"

namespace ncmdp {

namespace {

int ceil_int(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) <= 1e-9 * std::max(1.0, std::abs(v))) return static_cast<int>(r);
  return static_cast<int>(std::ceil(v));
}

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

// ---------------------------------------------------------------------------
// Features and ground truth

FeatureMap::FeatureMap(int num_states, int num_actions, std::vector<Eigen::VectorXd> phi)
    : S_(num_states), A_(num_actions), d_(0), phi_(std::move(phi)) {
  if (S_ < 1 || A_ < 1) throw ModelError("FeatureMap: bad dimensions");
  if (phi_.size() != static_cast<std::size_t>(S_) * A_)
    throw ModelError("FeatureMap: need one feature vector per (x, a)");
  d_ = static_cast<int>(phi_.front().size());
  if (d_ < 1) throw ModelError("FeatureMap: empty feature vectors");
  for (const auto& v : phi_) {
    if (v.size() != d_) throw ModelError("FeatureMap: feature vectors differ in length");
    if (v.norm() > 1.0 + 1e-12) throw ModelError("FeatureMap: feature norm exceeds 1");
  }
}

FeatureMap FeatureMap::one_hot(int num_states, int num_actions) {
  const int d = num_states * num_actions;
  std::vector<Eigen::VectorXd> phi(static_cast<std::size_t>(d), Eigen::VectorXd::Zero(d));
  for (int i = 0; i < d; ++i) phi[i](i) = 1.0;
  return FeatureMap(num_states, num_actions, std::move(phi));
}

double LinearCmdpGroundTruth::interpolation(int k) const {
  return episodes > 1 ? static_cast<double>(k - 1) / (episodes - 1) : 0.0;
}

Eigen::VectorXd LinearCmdpGroundTruth::theta_r(int k, int h) const {
  const double t = interpolation(k);
  return (1.0 - t) * theta_r0[h - 1] + t * theta_r1[h - 1];
}

Eigen::VectorXd LinearCmdpGroundTruth::theta_g(int k, int h) const {
  const double t = interpolation(k);
  return (1.0 - t) * theta_g0[h - 1] + t * theta_g1[h - 1];
}

Eigen::MatrixXd LinearCmdpGroundTruth::mu(int k, int h) const {
  const double t = interpolation(k);
  return (1.0 - t) * mu0[h - 1] + t * mu1[h - 1];
}

VariationBudgets LinearCmdpGroundTruth::parameter_budgets() const {
  VariationBudgets b;
  if (episodes < 2) return b;
  for (int h = 1; h <= horizon(); ++h)
    for (int k = 1; k < episodes; ++k) {
      b.reward += (theta_r(k + 1, h) - theta_r(k, h)).norm();
      b.utility += (theta_g(k + 1, h) - theta_g(k, h)).norm();
      b.kernel += (mu(k + 1, h) - mu(k, h)).norm();
    }
  return b;
}

namespace {

class LinearStages final : public StageSource {
 public:
  explicit LinearStages(LinearCmdpGroundTruth truth) : t_(std::move(truth)) {}

  StageModel stage(int k, int h) const override {
    const int S = t_.features.num_states();
    const int A = t_.features.num_actions();
    const Eigen::MatrixXd m = t_.mu(k, h);
    const Eigen::VectorXd tr = t_.theta_r(k, h);
    const Eigen::VectorXd tg = t_.theta_g(k, h);
    std::vector<std::vector<KernelEntry>> rows(static_cast<std::size_t>(S) * A);
    std::vector<double> r(rows.size()), g(rows.size());
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) {
        const auto i = static_cast<std::size_t>(x * A + a);
        fill_row(m, x, a, rows[i]);
        r[i] = unit(t_.features(x, a).dot(tr));
        g[i] = unit(t_.features(x, a).dot(tg));
      }
    return StageModel(h, S, A, std::move(rows), std::move(r), std::move(g));
  }

  double reward(int k, int h, int x, int a) const override {
    return unit(t_.features(x, a).dot(t_.theta_r(k, h)));
  }
  double utility(int k, int h, int x, int a) const override {
    return unit(t_.features(x, a).dot(t_.theta_g(k, h)));
  }
  void kernel_row(int k, int h, int x, int a, std::vector<KernelEntry>& out) const override {
    fill_row(t_.mu(k, h), x, a, out);
  }

 private:
  // Inner products of unit-range quantities can leave [0,1] by rounding.
  static double unit(double v) { return clip(v, 0.0, 1.0); }

  void fill_row(const Eigen::MatrixXd& m, int x, int a, std::vector<KernelEntry>& out) const {
    out.clear();
    const Eigen::RowVectorXd p = t_.features(x, a).transpose() * m;
    for (int s = 0; s < p.size(); ++s)
      if (p(s) > 0.0) out.push_back({s, p(s)});
  }

  LinearCmdpGroundTruth t_;
};

Eigen::VectorXd simplex_vector(int n, Rng& rng) {
  const auto v = random_simplex(n, rng);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

Eigen::VectorXd unit_box_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform01(rng);
  return v;
}

Eigen::MatrixXd row_stochastic(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) m.row(i) = simplex_vector(cols, rng).transpose();
  return m;
}

}  // namespace

LinearCmdpGroundTruth random_linear_cmdp(int S, int A, int d, int H, int K, double drift, Rng& rng) {
  if (S < 1 || A < 1 || d < 1 || H < 1 || K < 1)
    throw ConfigError("random_linear_cmdp: dimensions must be positive");
  if (!(drift >= 0.0 && drift <= 1.0)) throw ConfigError("random_linear_cmdp: drift must lie in [0,1]");
  std::vector<Eigen::VectorXd> phi;
  phi.reserve(static_cast<std::size_t>(S) * A);
  for (int i = 0; i < S * A; ++i) phi.push_back(simplex_vector(d, rng));
  LinearCmdpGroundTruth t{FeatureMap(S, A, std::move(phi)), {}, {}, {}, {}, {}, {}, {}, 0.0, K, {}};
  for (int h = 1; h <= H; ++h) {
    t.theta_r0.push_back(unit_box_vector(d, rng));
    t.theta_g0.push_back(unit_box_vector(d, rng));
    t.mu0.push_back(row_stochastic(d, S, rng));
    t.theta_r1.push_back((1.0 - drift) * t.theta_r0.back() + drift * unit_box_vector(d, rng));
    t.theta_g1.push_back((1.0 - drift) * t.theta_g0.back() + drift * unit_box_vector(d, rng));
    t.mu1.push_back((1.0 - drift) * t.mu0.back() + drift * row_stochastic(d, S, rng));
  }
  t.initial = random_simplex(S, rng);
  return t;
}

NonstationaryCmdp build_linear_cmdp(const LinearCmdpGroundTruth& truth) {
  return NonstationaryCmdp(truth.features.num_states(), truth.features.num_actions(),
                           truth.horizon(), truth.episodes, truth.initial, truth.rho,
                           truth.slater_delta, std::make_shared<LinearStages>(truth));
}

// ---------------------------------------------------------------------------
// LSVI building blocks

LsviParams lsvi_default_params(int K, double B, int d, int A, int H, double delta, double p_fail) {
  if (K < 1 || d < 1 || A < 1 || H < 1) throw std::invalid_argument("lsvi_default_params: bad dimensions");
  if (!(delta > 0.0)) throw std::invalid_argument("lsvi_default_params: delta must be positive");
  if (!(p_fail > 0.0 && p_fail < 1.0)) throw std::invalid_argument("lsvi_default_params: p must lie in (0,1)");
  const double b = B > 0.0 ? B : 1.0;
  const double log_a = std::log(static_cast<double>(A));
  LsviParams p;
  p.p_fail = p_fail;
  p.xi = 2.0 * H / delta;
  p.alpha = log_a * K / (2.0 * (1.0 + p.xi + H));
  p.eta = p.xi / std::sqrt(static_cast<double>(K) * H * H);
  const double T = static_cast<double>(K) * H;
  // With one action log|A| = 0; the log argument is floored at e so beta stays dH.
  const double arg = std::max(2.0 * log_a * d * T / p_fail, std::numbers::e);
  p.beta = d * H * std::sqrt(std::log(arg));
  const double frame = std::sqrt(d * static_cast<double>(K) / (b * H));
  p.frame_len = frame >= K ? K : std::max(1, ceil_int(frame));
  return p;
}

LsviState::LsviState(int horizon, const FeatureMap& features, double ridge_lambda)
    : H_(horizon), d_(features.dim()), lambda_(ridge_lambda), features_(&features) {
  if (H_ < 1) throw std::invalid_argument("LsviState: horizon must be >= 1");
  if (!(lambda_ > 0.0)) throw std::invalid_argument("LsviState: ridge lambda must be positive");
  gram_.resize(H_);
  gram_inv_.resize(H_);
  replay_.resize(H_);
  w_r_.resize(H_);
  w_g_.resize(H_);
  reset_frame();
}

void LsviState::add_sample(int h, const Transition& t) {
  const Eigen::VectorXd& phi = (*features_)(t.x, t.a);
  Eigen::MatrixXd& inv = gram_inv_[h - 1];
  const Eigen::VectorXd u = inv * phi;
  inv.noalias() -= (u * u.transpose()) / (1.0 + phi.dot(u));
  gram_[h - 1].noalias() += phi * phi.transpose();
  replay_[h - 1].push_back(t);
}

void LsviState::reset_frame() {
  for (int i = 0; i < H_; ++i) {
    gram_[i] = lambda_ * Eigen::MatrixXd::Identity(d_, d_);
    gram_inv_[i] = Eigen::MatrixXd::Identity(d_, d_) / lambda_;
    replay_[i].clear();
    w_r_[i] = Eigen::VectorXd::Zero(d_);
    w_g_[i] = Eigen::VectorXd::Zero(d_);
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> ridge_fit(const LsviState& st, int h,
                                                      std::span<const double> targets_r,
                                                      std::span<const double> targets_g) {
  const auto& replay = st.replay(h);
  if (targets_r.size() != replay.size() || targets_g.size() != replay.size())
    throw std::invalid_argument("ridge_fit: one target per replay sample required");
  Eigen::VectorXd br = Eigen::VectorXd::Zero(st.dim());
  Eigen::VectorXd bg = Eigen::VectorXd::Zero(st.dim());
  for (std::size_t i = 0; i < replay.size(); ++i) {
    const auto& phi = st.features()(replay[i].x, replay[i].a);
    br += targets_r[i] * phi;
    bg += targets_g[i] * phi;
  }
  Eigen::VectorXd wr = st.gram_inv(h) * br;
  Eigen::VectorXd wg = st.gram_inv(h) * bg;
  const double res = std::max((st.gram(h) * wr - br).norm() / (1.0 + br.norm()),
                              (st.gram(h) * wg - bg).norm() / (1.0 + bg.norm()));
  if (res > 1e-10) {
    std::ostringstream msg;
    msg << "ridge_fit: normal-equation residual " << res << " at h=" << h;
    throw std::runtime_error(msg.str());
  }
  return {std::move(wr), std::move(wg)};
}

std::pair<double, double> q_estimate(const LsviState& st, int h, int x, int a, double beta) {
  const auto& phi = st.features()(x, a);
  const double bonus = beta * std::sqrt(std::max(0.0, phi.dot(st.gram_inv(h) * phi)));
  const double H = st.horizon();
  return {clip(st.w_r(h).dot(phi) + bonus, 0.0, H), clip(st.w_g(h).dot(phi) + bonus, 0.0, H)};
}

std::vector<double> softmax_policy(std::span<const double> composite, double alpha) {
  if (composite.empty()) throw std::invalid_argument("softmax_policy: no actions");
  std::vector<double> p(composite.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double c : composite) m = std::max(m, alpha * c);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(alpha * composite[i] - m);
  for (double& v : p) v /= sum;
  return p;
}

double dual_update(double Y, double eta, double threshold, double V_g1, double xi) {
  return clip(Y + eta * (threshold - V_g1), 0.0, xi);
}

double tabular_counts_update(int n, std::span<const int> n_next, double reward_sum,
                             std::span<const double> V_next, double ridge_lambda) {
  if (n_next.size() != V_next.size())
    throw std::invalid_argument("tabular_counts_update: count and value rows differ in size");
  double num = reward_sum;
  for (std::size_t s = 0; s < n_next.size(); ++s)
    if (n_next[s] != 0) num += n_next[s] * V_next[s];
  return num / (n + ridge_lambda);
}

// ---------------------------------------------------------------------------
// Runs

namespace {

// Count statistics for one-hot features, indexed like the Q tables.
struct CountTables {
  CountTables(int H, int S, int A)
      : S(S), A(A), n(static_cast<std::size_t>(H) * S * A, 0),
        n_next(static_cast<std::size_t>(H) * S * A * S, 0),
        sum_r(n.size(), 0.0), sum_g(n.size(), 0.0) {}

  std::size_t idx(int h, int x, int a) const {
    return (static_cast<std::size_t>(h - 1) * S + x) * A + a;
  }
  void add(int h, const Transition& t) {
    const auto i = idx(h, t.x, t.a);
    ++n[i];
    sum_r[i] += t.r;
    sum_g[i] += t.g;
    if (t.next != kTerminal) ++n_next[i * S + t.next];
  }
  void reset() {
    std::fill(n.begin(), n.end(), 0);
    std::fill(n_next.begin(), n_next.end(), 0);
    std::fill(sum_r.begin(), sum_r.end(), 0.0);
    std::fill(sum_g.begin(), sum_g.end(), 0.0);
  }

  int S;
  int A;
  std::vector<int> n;
  std::vector<int> n_next;
  std::vector<double> sum_r;
  std::vector<double> sum_g;
};

}  // namespace

std::vector<LsviEpisode> run_lsvi(const NonstationaryCmdp& cmdp, const FeatureMap& features,
                                  const LsviParams& params, Rng& rng, const LsviOptions& opts) {
  const int H = cmdp.horizon();
  const int S = cmdp.num_states();
  const int A = cmdp.num_actions();
  if (features.num_states() != S || features.num_actions() != A)
    throw std::invalid_argument("run_lsvi: feature map does not match the cmdp");
  const bool counts = opts.backend == LsviBackend::Counts;
  if (counts && features.dim() != S * A)
    throw std::invalid_argument("run_lsvi: count backend needs one-hot features (d = S*A)");
  if (params.frame_len < 1) throw std::invalid_argument("run_lsvi: frame_len must be >= 1");
  const int first = opts.first_episode;
  const int last = opts.num_episodes > 0 ? first + opts.num_episodes - 1 : cmdp.episodes();
  cmdp.check_episode(first);
  cmdp.check_episode(last);

  LsviState st(H, features, params.ridge_lambda);
  CountTables ct(counts ? H : 1, counts ? S : 1, counts ? A : 1);
  const auto SA = static_cast<std::size_t>(S) * A;
  std::vector<double> q_r(static_cast<std::size_t>(H) * SA), q_g(q_r.size()), pi(q_r.size());
  std::vector<double> v_r(static_cast<std::size_t>(S)), v_g(v_r.size());
  std::vector<double> v_r_next(v_r.size()), v_g_next(v_r.size());
  std::vector<double> t_r, t_g, comp(static_cast<std::size_t>(A));
  const double gap_bound = params.alpha > 0.0 ? std::log(static_cast<double>(A)) / params.alpha
                                              : std::numeric_limits<double>::infinity();

  std::vector<LsviEpisode> out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  for (int k = first; k <= last; ++k) {
    // Backward pass.
    std::fill(v_r_next.begin(), v_r_next.end(), 0.0);
    std::fill(v_g_next.begin(), v_g_next.end(), 0.0);
    for (int h = H; h >= 1; --h) {
      const auto base = static_cast<std::size_t>(h - 1) * SA;
      if (counts) {
        for (int x = 0; x < S; ++x)
          for (int a = 0; a < A; ++a) {
            const auto i = ct.idx(h, x, a);
            const std::span<const int> row(ct.n_next.data() + i * S, static_cast<std::size_t>(S));
            const double wr = tabular_counts_update(ct.n[i], row, ct.sum_r[i], v_r_next, params.ridge_lambda);
            const double wg = tabular_counts_update(ct.n[i], row, ct.sum_g[i], v_g_next, params.ridge_lambda);
            const double bonus = params.beta / std::sqrt(ct.n[i] + params.ridge_lambda);
            q_r[base + x * A + a] = clip(wr + bonus, 0.0, H);
            q_g[base + x * A + a] = clip(wg + bonus, 0.0, H);
          }
      } else {
        const auto& replay = st.replay(h);
        t_r.resize(replay.size());
        t_g.resize(replay.size());
        for (std::size_t i = 0; i < replay.size(); ++i) {
          const int nx = replay[i].next;
          t_r[i] = replay[i].r + (nx == kTerminal ? 0.0 : v_r_next[nx]);
          t_g[i] = replay[i].g + (nx == kTerminal ? 0.0 : v_g_next[nx]);
        }
        auto [wr, wg] = ridge_fit(st, h, t_r, t_g);
        st.w_r(h) = std::move(wr);
        st.w_g(h) = std::move(wg);
        for (int x = 0; x < S; ++x)
          for (int a = 0; a < A; ++a) {
            const auto [qr, qg] = q_estimate(st, h, x, a, params.beta);
            q_r[base + x * A + a] = qr;
            q_g[base + x * A + a] = qg;
          }
      }
      for (int x = 0; x < S; ++x) {
        const auto row = base + static_cast<std::size_t>(x) * A;
        for (int a = 0; a < A; ++a) comp[a] = q_r[row + a] + st.Y * q_g[row + a];
        const auto p = softmax_policy(comp, params.alpha);
        double vr = 0.0, vg = 0.0;
        for (int a = 0; a < A; ++a) {
          pi[row + a] = p[a];
          vr += p[a] * q_r[row + a];
          vg += p[a] * q_g[row + a];
        }
        v_r[x] = vr;
        v_g[x] = vg;
      }
      std::swap(v_r, v_r_next);
      std::swap(v_g, v_g_next);
    }
    if (opts.on_q) opts.on_q(k, q_r, q_g);

    LsviEpisode ep;
    ep.k = k;
    ep.Y = st.Y;
    ep.frame = st.frame;
    ep.softmax_gap_excess = -std::numeric_limits<double>::infinity();
    if (opts.evaluate_policy) {
      const auto v = policy_value(cmdp, k, StochasticPolicy(H, S, A, pi));
      ep.expected_return = v.reward;
      ep.expected_utility = v.utility;
    }

    // Forward rollout; v_g_next now holds V_{g,1}.
    int x = sample_initial(cmdp, rng);
    const double v_g1 = v_g_next[x];
    for (int h = 1; h <= H; ++h) {
      const auto row = static_cast<std::size_t>(h - 1) * SA + static_cast<std::size_t>(x) * A;
      const std::span<const double> p(pi.data() + row, static_cast<std::size_t>(A));
      double best = -std::numeric_limits<double>::infinity(), mean = 0.0;
      for (int a = 0; a < A; ++a) {
        const double c = q_r[row + a] + st.Y * q_g[row + a];
        best = std::max(best, c);
        mean += p[a] * c;
      }
      const double excess = (best - mean) - gap_bound;
      ep.softmax_gap_excess = std::max(ep.softmax_gap_excess, excess);
      if (opts.check_invariants && excess > 1e-12 * (1.0 + std::abs(best))) {
        std::ostringstream msg;
        msg << "lsvi: soft-max gap exceeds log|A|/alpha by " << excess << " at k=" << k << " h=" << h;
        throw std::logic_error(msg.str());
      }
      const int a = static_cast<int>(sample_index(p, rng));
      const auto res = step(cmdp, k, h, x, a, rng);
      const Transition t{x, a, res.next_state, res.reward, res.utility};
      if (counts)
        ct.add(h, t);
      else
        st.add_sample(h, t);
      ep.realized_return += res.reward;
      ep.realized_utility += res.utility;
      x = res.next_state;
    }
    st.Y = dual_update(st.Y, params.eta, cmdp.rho(), v_g1, params.xi);
    if (opts.check_invariants && !(st.Y >= 0.0 && st.Y <= params.xi))
      throw std::logic_error("lsvi: dual variable left [0, xi]");

    if (!counts) {
      ep.w_r_norm = st.w_r(1).norm();
      ep.w_g_norm = st.w_g(1).norm();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(st.gram(1), Eigen::EigenvaluesOnly);
      ep.min_eig_gram1 = es.eigenvalues()(0);
    }
    ++st.episode_in_frame;
    if (opts.on_episode) opts.on_episode(ep);
    out.push_back(ep);
    if (st.episode_in_frame == params.frame_len && k < last) {
      if (counts) ct.reset();
      st.reset_frame();
      st.episode_in_frame = 0;
      ++st.frame;
    }
  }
  return out;
}

CandidateSet linear_candidates(int K, int W, int d, int H, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("linear_candidates: delta must be positive");
  const double xi = 2.0 * H / delta;
  const double inner = 6.0 * (1.0 + xi) / (xi * delta) * (1.0 + delta) * std::pow(d, 1.25) *
                       std::pow(H, 2.25);
  const double Delta = std::pow(inner, 4.0);
  auto c = geometric_candidates(std::sqrt(static_cast<double>(K)) / (Delta * W), W);
  c.Delta = Delta;
  return c;
}

double outer_payoff(double R, double G, double Y, double W, int H, double xi) {
  return (R + Y * G) / (W * H * (1.0 + xi));
}

LsviUnknownRun run_lsvi_unknown_budget(const NonstationaryCmdp& cmdp, const FeatureMap& features,
                                       const LsviUnknownParams& params, Rng& rng) {
  const int K = cmdp.episodes();
  const int H = cmdp.horizon();
  const int A = cmdp.num_actions();
  const int d = features.dim();
  const double rho = cmdp.rho();
  const double delta = params.delta > 0.0 ? params.delta : cmdp.slater_delta().value_or(0.0);
  if (!(delta > 0.0))
    throw std::invalid_argument("lsvi_unknown_budget: no Slater estimate (set delta)");
  const bool outer = params.variant == UnknownBudgetVariant::OuterPrimalDual;

  LsviUnknownRun out;
  if (params.W > 0)
    out.W = params.W;
  else if (outer)
    out.W = ceil_int(std::sqrt(static_cast<double>(d) * K / H));
  else
    out.W = ceil_int(std::sqrt(static_cast<double>(K)));
  out.W = std::clamp(out.W, 1, K);

  if (!params.candidates.empty()) {
    out.candidates.values = params.candidates;
    out.candidates.J = static_cast<int>(params.candidates.size()) - 1;
  } else if (outer) {
    out.candidates = geometric_candidates(1.0, out.W);
  } else if (params.Delta) {
    out.candidates = geometric_candidates(
        std::sqrt(static_cast<double>(K)) / (*params.Delta * out.W), out.W);
    out.candidates.Delta = *params.Delta;
  } else {
    out.candidates = linear_candidates(K, out.W, d, H, delta);
  }
  out.gamma0 = exp3_gamma0(K, out.W, H);
  const double xi = 2.0 * H / delta;
  out.outer_eta = std::sqrt(xi * xi * out.W / (static_cast<double>(K) * H * H));
  const double k_lambda = std::pow(static_cast<double>(K), params.lambda_exp);
  const auto& cands = out.candidates.values;
  double outer_y = 0.0;

  EpochRunner runner = [&](int arm, int first, int length, Rng& r) {
    auto p = lsvi_default_params(length, outer ? 1.0 : cands[arm], d, A, H, delta, params.p_fail);
    if (outer) p.frame_len = std::clamp(ceil_int(cands[arm]), 1, length);
    if (params.tune) params.tune(p);
    LsviOptions opts;
    opts.backend = params.backend;
    opts.first_episode = first;
    opts.num_episodes = length;
    const auto eps = run_lsvi(cmdp, features, p, r, opts);
    EpochResult res;
    res.episodes.reserve(eps.size());
    for (const auto& e : eps) {
      res.R += e.realized_return;
      res.G += e.realized_utility;
      res.episodes.push_back({e.k, e.realized_return, e.realized_utility, e.expected_return,
                              e.expected_utility, outer ? outer_y : e.Y, static_cast<double>(arm)});
    }
    return res;
  };
  EpochShaper shaper = [&](const EpochResult& res, int length) {
    if (!outer) return shaped_payoff(res.R, res.G, length, H, rho, k_lambda);
    outer_y = clip(outer_y + out.outer_eta * (rho - res.G / length), 0.0, xi);
    out.outer_Y.push_back(outer_y);
    return outer_payoff(res.R, res.G, outer_y, length, H, xi);
  };
  out.run = run_bandit_over_bandit(K, out.W, static_cast<int>(cands.size()), out.gamma0, runner,
                                   shaper, rng);
  return out;
}

}  // namespace ncmdp

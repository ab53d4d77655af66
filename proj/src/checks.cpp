#include "ncmdp/checks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ncmdp/bob.hpp"
#include "ncmdp/envs.hpp"
#include "ncmdp/exp3.hpp"
#include "ncmdp/linear.hpp"
#include "ncmdp/metrics.hpp"
#include "ncmdp/oracle.hpp"
#include "ncmdp/reference.hpp"
#include "ncmdp/tripleq.hpp"

namespace ncmdp {

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
CheckOutcome timed(std::string name, std::uint64_t seed, F&& body) {
  CheckOutcome out;
  out.name = std::move(name);
  out.seed = seed;
  const auto t0 = Clock::now();
  try {
    out.detail = body();
    out.passed = out.detail.empty();
    if (out.passed) out.detail = "ok";
  } catch (const std::exception& e) {
    out.passed = false;
    out.detail = std::string("exception: ") + e.what();
  }
  out.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

// Drifting random model with rho at `rho_fraction` of the best utility of the
// first episode and all kernel rows interpolated over the run.
DriftingCmdp drifting_model(int S, int A, int H, int K, double weight, double rho_fraction,
                            Rng& rng) {
  auto base = random_base(S, A, H, K, rng);
  const double umax = max_utility_policy(base.stages, base.mu0).value.utility;
  base.rho = rho_fraction * umax;
  DriftSchedule sch;
  sch.kind = DriftKind::KernelInterpolation;
  sch.magnitude = K > 1 ? weight / (K - 1) : 0.0;
  for (int h = 1; h <= H; ++h)
    for (int x = 0; x < S; ++x)
      for (int a = 0; a < A; ++a) sch.affected.push_back({x, a, h});
  return build_drifting(sch, std::move(base), rng);
}

}  // namespace

CheckOutcome check_oracle_exactness(int instances, std::uint64_t seed, double tol) {
  return timed("oracle exactness", seed, [&]() -> std::string {
    Rng rng(seed);
    double worst = 0.0;
    int infeasible = 0;
    for (int i = 0; i < instances; ++i) {
      const int S = uniform_int(rng, 1, 3), A = uniform_int(rng, 1, 3), H = uniform_int(rng, 1, 3);
      const auto base = random_base(S, A, H, 1, rng);
      const double umax = max_utility_policy(base.stages, base.mu0).value.utility;
      // Thresholds up to 5% above the best utility exercise the infeasible path.
      const double rho = uniform01(rng) * 1.05 * umax;
      const auto dual = solve_episode(base.stages, base.mu0, rho);
      const auto ref = exhaustive_optimal_value(base.stages, base.mu0, rho);
      if (dual.feasible != ref.has_value()) {
        std::ostringstream msg;
        msg << "instance " << i << ": feasibility differs (dual " << dual.feasible << ")";
        return msg.str();
      }
      if (!ref) {
        ++infeasible;
        continue;
      }
      const double err = std::abs(dual.optimal_value - *ref);
      worst = std::max(worst, err);
      if (err > tol) {
        std::ostringstream msg;
        msg << "instance " << i << " (S=" << S << " A=" << A << " H=" << H << "): dual "
            << dual.optimal_value << " vs exhaustive " << *ref;
        return msg.str();
      }
    }
    (void)infeasible;
    return {};
  });
}

CheckOutcome check_q_boundedness(int episodes, std::uint64_t seed, double bonus_scale) {
  return timed("Q boundedness", seed, [&]() -> std::string {
    Rng rng(seed);
    const auto model = drifting_model(4, 2, 4, episodes, 0.5, 0.5, rng);
    const auto& cmdp = model.cmdp;
    auto p = default_params(episodes, model.expected.total(), 4, 2, 4);
    p.bonus_scale = bonus_scale;
    TripleQOptions opts;
    opts.check_bounds = true;
    opts.evaluate_policy = false;
    std::string err;
    opts.on_episode = [&](const TripleQEpisode& ep, const TripleQState& st) {
      if (err.empty() && !(st.Z >= 0.0)) err = "Z < 0 at episode " + std::to_string(ep.k);
    };
    Rng run_rng = make_stream(seed, 1);
    run_tripleq(cmdp, p, run_rng, opts);
    return err;
  });
}

CheckOutcome check_visit_counting(int episodes, std::uint64_t seed) {
  return timed("visit counting", seed, [&]() -> std::string {
    Rng rng(seed);
    const int S = 3, A = 2, H = 3;
    const auto model = drifting_model(S, A, H, episodes, 0.3, 0.4, rng);
    auto p = default_params(episodes, 1.0, S, A, H);
    p.frame_len = std::max(2, episodes / 7);
    std::vector<int> mine(static_cast<std::size_t>(H) * S * A, 0);
    std::string err;
    int seen_frame = 1;
    TripleQOptions opts;
    opts.evaluate_policy = false;
    // Replays the trajectory through a shadow stream: the learner and the
    // shadow consume identical draws, so counts can be rebuilt exactly.
    Rng run_rng = make_stream(seed, 2);
    Rng shadow = run_rng;
    TripleQState shadow_state(H, S, A);
    opts.on_episode = [&](const TripleQEpisode& ep, const TripleQState& st) {
      if (!err.empty()) return;
      if (ep.frame != seen_frame) {
        std::fill(mine.begin(), mine.end(), 0);
        seen_frame = ep.frame;
      }
      // Recompute this episode's path with the shadow learner.
      int x = sample_initial(model.cmdp, shadow);
      for (int h = 1; h <= H; ++h) {
        const int a = select_action(shadow_state, h, x, p.eta);
        const auto res = step(model.cmdp, ep.k, h, x, a, shadow);
        update_tables(shadow_state, x, a, res.reward, res.utility, res.next_state, h, p);
        if (h == 1) shadow_state.Cbar += shadow_state.C(1, x, a);
        ++mine[(static_cast<std::size_t>(h - 1) * S + x) * A + a];
        x = res.next_state;
      }
      ++shadow_state.episode_in_frame;
      const auto n = st.n_table();
      for (std::size_t i = 0; i < mine.size(); ++i)
        if (n[i] != mine[i]) {
          err = "count mismatch at episode " + std::to_string(ep.k);
          return;
        }
      if (shadow_state.episode_in_frame == p.frame_len && ep.k < episodes) {
        end_of_frame(shadow_state, p, model.cmdp.rho());
      }
    };
    run_tripleq(model.cmdp, p, run_rng, opts);
    return err;
  });
}

CheckOutcome check_exp3_invariants(int epochs, std::uint64_t seed) {
  return timed("exp3 simplex invariants", seed, [&]() -> std::string {
    Rng rng(seed);
    const int arms = uniform_int(rng, 2, 8);
    const double gamma0 = 0.01 + 0.99 * uniform01(rng);
    Exp3State st(arms, gamma0);
    for (int i = 0; i < epochs; ++i) {
      const auto p = exp3_probs(st);
      double sum = 0.0, lo = 1.0;
      for (double v : p) {
        sum += v;
        lo = std::min(lo, v);
      }
      std::ostringstream msg;
      if (std::abs(sum - 1.0) > 1e-12) msg << "epoch " << i << ": sum p = " << sum;
      if (lo < gamma0 / arms - 1e-15) msg << "epoch " << i << ": min p below gamma0/(J+1)";
      for (double lw : st.log_weights())
        if (!std::isfinite(lw)) msg << "epoch " << i << ": non-finite weight";
      if (!msg.str().empty()) return msg.str();
      const int arm = draw_arm(st, rng);
      exp3_update(st, arm, uniform01(rng) / p[arm]);
    }
    return {};
  });
}

CheckOutcome check_exp3_estimator(std::uint64_t seed, double tol) {
  return timed("exp3 estimator expectation", seed, [&]() -> std::string {
    Rng rng(seed);
    for (int trial = 0; trial < 200; ++trial) {
      const int arms = uniform_int(rng, 2, 6);
      Exp3State st(arms, uniform01(rng));
      for (int j = 0; j < arms; ++j) st.log_weight(j) = 3.0 * (uniform01(rng) - 0.5);
      const auto p = exp3_probs(st);
      const double W = uniform_int(rng, 1, 50);
      const int H = uniform_int(rng, 1, 6);
      const int K = uniform_int(rng, 10, 100000);
      const double rho = uniform01(rng) * H;
      std::vector<double> R(arms), G(arms);
      for (int j = 0; j < arms; ++j) {
        R[j] = uniform01(rng) * W * H;
        G[j] = uniform01(rng) * W * H;
      }
      const double kl = std::pow(static_cast<double>(K), 1.0 / 9.0);
      for (int j = 0; j < arms; ++j) {
        // E over the drawn arm i of rhat_i * 1{i == j}.
        double expect = 0.0;
        for (int i = 0; i < arms; ++i)
          if (i == j) expect += p[i] * shape_reward(R[j], G[j], W, H, rho, K, 1.0 / 9.0, p[i]);
        const double target = shaped_payoff(R[j], G[j], W, H, rho, kl);
        if (std::abs(expect - target) > tol * std::max(1.0, target)) {
          std::ostringstream msg;
          msg << "trial " << trial << " arm " << j << ": " << expect << " vs " << target;
          return msg.str();
        }
      }
    }
    return {};
  });
}

CheckOutcome check_exp3_better_arm(int seeds, std::uint64_t seed) {
  return timed("exp3 prefers the better arm", seed, [&]() -> std::string {
    const int epochs = 2000;
    const double payoff[2] = {0.4, 0.6};
    const double gamma0 = std::min(1.0, std::sqrt(2.0 * std::log(2.0) / ((std::numbers::e - 1.0) * epochs)));
    double mean = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng = make_stream(seed, static_cast<std::uint64_t>(s));
      Exp3State st(2, gamma0);
      for (int i = 0; i < epochs; ++i) {
        const auto p = exp3_probs(st);
        const int arm = static_cast<int>(sample_index(p, rng));
        const double reward = uniform01(rng) < payoff[arm] ? 1.0 : 0.0;
        exp3_update(st, arm, reward / p[arm]);
      }
      mean += exp3_probs(st)[1] / seeds;
    }
    if (mean > 0.5) return {};
    std::ostringstream msg;
    msg << "mean terminal probability of the better arm " << mean;
    return msg.str();
  });
}

CheckOutcome check_lsvi_backends(int episodes, std::uint64_t seed, double tol) {
  return timed("lsvi one-hot vs counts", seed, [&]() -> std::string {
    const int S = 4, A = 2, H = 3;
    Rng rng(seed);
    const auto model = drifting_model(S, A, H, episodes, 0.5, 0.5, rng);
    const auto features = FeatureMap::one_hot(S, A);
    for (double beta_scale : {1.0, 0.02}) {
      auto p = lsvi_default_params(episodes, model.expected.total(), S * A, A, H, 0.5);
      p.beta *= beta_scale;
      p.frame_len = std::max(1, episodes / 4);
      std::vector<std::vector<double>> qa;
      std::vector<LsviEpisode> ea, eb;
      LsviOptions oa;
      oa.evaluate_policy = false;
      oa.on_q = [&](int, std::span<const double> qr, std::span<const double> qg) {
        std::vector<double> v(qr.begin(), qr.end());
        v.insert(v.end(), qg.begin(), qg.end());
        qa.push_back(std::move(v));
      };
      Rng ra = make_stream(seed, 3);
      ea = run_lsvi(model.cmdp, features, p, ra, oa);
      double worst = 0.0;
      std::size_t idx = 0;
      LsviOptions ob = oa;
      ob.backend = LsviBackend::Counts;
      ob.on_q = [&](int, std::span<const double> qr, std::span<const double> qg) {
        const auto& ref = qa[idx++];
        for (std::size_t i = 0; i < qr.size(); ++i) {
          worst = std::max(worst, std::abs(qr[i] - ref[i]));
          worst = std::max(worst, std::abs(qg[i] - ref[qr.size() + i]));
        }
      };
      Rng rb = make_stream(seed, 3);
      eb = run_lsvi(model.cmdp, features, p, rb, ob);
      std::ostringstream msg;
      if (worst > tol) msg << "beta x" << beta_scale << ": max Q difference " << worst;
      for (std::size_t i = 0; i < ea.size() && msg.str().empty(); ++i)
        if (ea[i].realized_return != eb[i].realized_return || std::abs(ea[i].Y - eb[i].Y) > tol)
          msg << "beta x" << beta_scale << ": trajectories diverge at episode " << ea[i].k;
      if (!msg.str().empty()) return msg.str();
    }
    return {};
  });
}

CheckOutcome check_sherman_morrison(int sequences, std::uint64_t seed, double tol) {
  return timed("sherman-morrison vs dense", seed, [&]() -> std::string {
    Rng rng(seed);
    for (int s = 0; s < sequences; ++s) {
      const int d = uniform_int(rng, 2, 10);
      const int S = uniform_int(rng, 2, 6), A = uniform_int(rng, 1, 3);
      std::vector<Eigen::VectorXd> phi;
      for (int i = 0; i < S * A; ++i) {
        Eigen::VectorXd v(d);
        for (int j = 0; j < d; ++j) v(j) = 2.0 * uniform01(rng) - 1.0;
        v *= uniform01(rng) / std::max(1.0, v.norm());
        phi.push_back(v);
      }
      const FeatureMap fm(S, A, phi);
      LsviState st(1, fm, 1.0);
      const int n = uniform_int(rng, 1, 200);
      std::vector<double> yr, yg;
      for (int i = 0; i < n; ++i) {
        const Transition t{uniform_int(rng, 0, S - 1), uniform_int(rng, 0, A - 1), kTerminal,
                           uniform01(rng), uniform01(rng)};
        st.add_sample(1, t);
        yr.push_back(3.0 * uniform01(rng));
        yg.push_back(3.0 * uniform01(rng));
      }
      Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(d, d);
      Eigen::VectorXd br = Eigen::VectorXd::Zero(d), bg = Eigen::VectorXd::Zero(d);
      for (int i = 0; i < n; ++i) {
        const auto& t = st.replay(1)[i];
        gram += fm(t.x, t.a) * fm(t.x, t.a).transpose();
        br += yr[i] * fm(t.x, t.a);
        bg += yg[i] * fm(t.x, t.a);
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
      const Eigen::MatrixXd dense_inv = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
      const auto [wr, wg] = ridge_fit(st, 1, yr, yg);
      const double e_inv = (st.gram_inv(1) - dense_inv).cwiseAbs().maxCoeff();
      const double e_w = std::max((wr - ldlt.solve(br)).cwiseAbs().maxCoeff(),
                                  (wg - ldlt.solve(bg)).cwiseAbs().maxCoeff());
      const double e_gram = (st.gram(1) - gram).cwiseAbs().maxCoeff();
      if (std::max({e_inv, e_w, e_gram}) > tol) {
        std::ostringstream msg;
        msg << "sequence " << s << " (d=" << d << ", n=" << n << "): inverse " << e_inv
            << ", weights " << e_w << ", gram " << e_gram;
        return msg.str();
      }
    }
    return {};
  });
}

CheckOutcome check_softmax_gap(int episodes, std::uint64_t seed) {
  return timed("soft-max gap bound", seed, [&]() -> std::string {
    Rng rng(seed);
    const int S = 4, A = 3, H = 3, d = 5;
    auto truth = random_linear_cmdp(S, A, d, H, episodes, 0.3, rng);
    truth.rho = 0.5 * H * 0.5;
    const auto cmdp = build_linear_cmdp(truth);
    for (double alpha_scale : {1.0, 1e-3, 1e-6}) {
      auto p = lsvi_default_params(episodes, 1.0, d, A, H, 0.5);
      p.alpha *= alpha_scale;
      LsviOptions opts;
      opts.check_invariants = true;
      opts.evaluate_policy = false;
      Rng r = make_stream(seed, 4);
      const auto eps = run_lsvi(cmdp, truth.features, p, r, opts);
      for (const auto& e : eps)
        if (e.softmax_gap_excess > 1e-12 * H * (1.0 + p.xi)) {
          std::ostringstream msg;
          msg << "alpha x" << alpha_scale << ": gap excess " << e.softmax_gap_excess
              << " at episode " << e.k;
          return msg.str();
        }
    }
    return {};
  });
}

CheckOutcome check_dual_ranges(int episodes, std::uint64_t seed) {
  return timed("dual ranges", seed, [&]() -> std::string {
    Rng rng(seed);
    const int S = 4, A = 2, H = 3, d = 4;
    for (double rho_fraction : {0.2, 0.9, 1.0}) {
      auto truth = random_linear_cmdp(S, A, d, H, episodes, 0.5, rng);
      truth.rho = rho_fraction * H * 0.6;
      const auto cmdp = build_linear_cmdp(truth);
      for (double delta : {0.05, 0.5, 3.0}) {
        auto p = lsvi_default_params(episodes, 1.0, d, A, H, delta);
        p.eta *= 50.0;  // large steps push Y against both ends of its range
        LsviOptions opts;
        opts.evaluate_policy = false;
        std::string err;
        opts.on_episode = [&](const LsviEpisode& e) {
          if (err.empty() && !(e.Y >= 0.0 && e.Y <= p.xi))
            err = "Y = " + std::to_string(e.Y) + " outside [0, xi]";
        };
        Rng r = make_stream(seed, 5);
        run_lsvi(cmdp, truth.features, p, r, opts);
        if (!err.empty()) return err;
        LsviUnknownParams up;
        up.variant = UnknownBudgetVariant::OuterPrimalDual;
        up.delta = delta;
        Rng r2 = make_stream(seed, 6);
        const auto run = run_lsvi_unknown_budget(cmdp, truth.features, up, r2);
        const double xi = 2.0 * H / delta;
        for (double y : run.outer_Y)
          if (!(y >= 0.0 && y <= xi)) return "outer Y = " + std::to_string(y) + " outside [0, xi]";
      }
      // Triple-Q on the same tabular view.
      auto tp = default_params(episodes, 1.0, S, A, H);
      tp.frame_len = std::max(1, episodes / 20);
      tp.eps = 0.5;
      TripleQOptions topts;
      topts.evaluate_policy = false;
      std::string err;
      topts.on_episode = [&](const TripleQEpisode& e, const TripleQState&) {
        if (err.empty() && !(e.Z >= 0.0)) err = "Z = " + std::to_string(e.Z) + " below 0";
      };
      Rng r3 = make_stream(seed, 7);
      run_tripleq(cmdp, tp, r3, topts);
      if (!err.empty()) return err;
    }
    return {};
  });
}

CheckOutcome check_budget_accounting(std::uint64_t seed, double tol) {
  return timed("budget accounting", seed, [&]() -> std::string {
    Rng rng(seed);
    const int S = 3, A = 2, H = 3, K = 40;
    const DriftKind kinds[] = {DriftKind::RewardRamp, DriftKind::UtilityRamp,
                               DriftKind::KernelInterpolation, DriftKind::PiecewiseSwitch};
    for (auto kind : kinds) {
      auto base = random_base(S, A, H, K, rng);
      DriftSchedule sch;
      sch.kind = kind;
      sch.period = 7;
      for (int h = 1; h <= H; ++h)
        for (int x = 0; x < S; ++x)
          for (int a = 0; a < A; ++a)
            if (uniform01(rng) < 0.6 || (h == 1 && x == 0 && a == 0)) sch.affected.push_back({x, a, h});
      if (kind == DriftKind::RewardRamp || kind == DriftKind::UtilityRamp) {
        // Largest ramp that keeps every affected value inside [0, 1].
        double room = 1.0;
        for (const auto& s : sch.affected) {
          const auto& st = base.stages[s.h - 1];
          const double v = kind == DriftKind::RewardRamp ? st.reward(s.x, s.a) : st.utility(s.x, s.a);
          room = std::min(room, 1.0 - v);
        }
        sch.magnitude = 0.9 * room / (K - 1);
      } else if (kind == DriftKind::KernelInterpolation) {
        sch.magnitude = 0.8 / (K - 1);
      } else {
        sch.magnitude = 0.7;
      }
      const auto model = build_drifting(sch, std::move(base), rng);
      const auto measured = variation_budgets(model.cmdp);
      const double err = std::max({std::abs(measured.reward - model.expected.reward),
                                   std::abs(measured.utility - model.expected.utility),
                                   std::abs(measured.kernel - model.expected.kernel)});
      if (err > tol) {
        std::ostringstream msg;
        msg << "schedule kind " << static_cast<int>(kind) << ": analytic (" << model.expected.reward
            << ", " << model.expected.utility << ", " << model.expected.kernel << ") vs measured ("
            << measured.reward << ", " << measured.utility << ", " << measured.kernel << ")";
        return msg.str();
      }
      if (model.expected.total() <= 0.0) return "schedule produced no drift";
    }
    return {};
  });
}

CheckOutcome check_metrics_sums(std::uint64_t seed, double tol) {
  return timed("metrics sums", seed, [&]() -> std::string {
    Rng rng(seed);
    MetricsSeries m(0.7);
    for (int k = 1; k <= 5000; ++k) m.accumulate(k, uniform01(rng), uniform01(rng), uniform01(rng));
    double reg = 0.0, vio = 0.0;
    for (const auto& r : m.rows()) {
      reg += r.oracle_value - r.realized_return;
      vio += m.rho() - r.realized_utility;
      if (std::abs(reg - r.regret_cum) > tol || std::abs(vio - r.violation_cum) > tol)
        return "running sums drift at episode " + std::to_string(r.k);
    }
    return {};
  });
}

std::vector<CheckOutcome> check_invariants(const CheckOptions& opts) {
  const auto s = opts.seed;
  return {
      check_oracle_exactness(100, s),
      check_q_boundedness(2000, s, opts.bonus_scale),
      check_visit_counting(300, s),
      check_exp3_invariants(10000, s),
      check_exp3_estimator(s),
      check_exp3_better_arm(5, s),
      check_lsvi_backends(200, s),
      check_sherman_morrison(100, s),
      check_softmax_gap(200, s),
      check_dual_ranges(100, s),
      check_budget_accounting(s),
      check_metrics_sums(s),
  };
}

}  // namespace ncmdp

#include "ncmdp/reference.hpp"

#include <algorithm>
#include <stdexcept>

namespace ncmdp {

std::vector<ValuePoint> enumerate_deterministic_values(std::span<const StageModel> stages,
                                                       std::span<const double> mu0,
                                                       long long limit) {
  if (stages.empty()) throw std::invalid_argument("enumerate: no stages");
  const int H = static_cast<int>(stages.size());
  const int S = stages.front().num_states();
  const int A = stages.front().num_actions();
  const int slots = S * H;
  long long count = 1;
  for (int i = 0; i < slots; ++i) {
    count *= A;
    if (count > limit) throw std::invalid_argument("enumerate: too many deterministic policies");
  }
  std::vector<ValuePoint> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<int> act(static_cast<std::size_t>(slots), 0);  // [h-1][x]
  std::vector<double> vr(S), vg(S), nr(S), ng(S);
  for (long long c = 0; c < count; ++c) {
    std::fill(nr.begin(), nr.end(), 0.0);
    std::fill(ng.begin(), ng.end(), 0.0);
    for (int h = H; h >= 1; --h) {
      const auto& st = stages[h - 1];
      for (int x = 0; x < S; ++x) {
        const int a = act[(h - 1) * S + x];
        double r = st.reward(x, a), g = st.utility(x, a);
        for (const auto& e : st.row(x, a)) {
          r += e.prob * nr[e.next];
          g += e.prob * ng[e.next];
        }
        vr[x] = r;
        vg[x] = g;
      }
      std::swap(vr, nr);
      std::swap(vg, ng);
    }
    ValuePoint p{0.0, 0.0};
    for (int x = 0; x < S; ++x) {
      p.reward += mu0[x] * nr[x];
      p.utility += mu0[x] * ng[x];
    }
    out.push_back(p);
    // Odometer increment over the action slots.
    for (int i = 0; i < slots; ++i) {
      if (++act[i] < A) break;
      act[i] = 0;
    }
  }
  return out;
}

std::optional<double> hull_optimum(std::span<const ValuePoint> points, double threshold) {
  if (points.empty()) return std::nullopt;
  std::vector<ValuePoint> p(points.begin(), points.end());
  std::sort(p.begin(), p.end(), [](const ValuePoint& a, const ValuePoint& b) {
    return a.utility < b.utility || (a.utility == b.utility && a.reward < b.reward);
  });
  if (p.back().utility < threshold) return std::nullopt;
  // Upper hull by monotone chain, left to right in utility.
  std::vector<ValuePoint> hull;
  for (const auto& q : p) {
    while (hull.size() >= 2) {
      const auto& o = hull[hull.size() - 2];
      const auto& m = hull.back();
      const double cross = (m.utility - o.utility) * (q.reward - o.reward) -
                           (m.reward - o.reward) * (q.utility - o.utility);
      if (cross >= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(q);
  }
  // The envelope rises up to its peak and falls after it; the best feasible
  // point sits at max(threshold, peak utility).
  std::size_t peak = 0;
  for (std::size_t i = 1; i < hull.size(); ++i)
    if (hull[i].reward > hull[peak].reward) peak = i;
  if (hull[peak].utility >= threshold) return hull[peak].reward;
  for (std::size_t i = peak + 1; i < hull.size(); ++i) {
    if (hull[i].utility >= threshold) {
      const auto& a = hull[i - 1];
      const auto& b = hull[i];
      if (b.utility == a.utility) return b.reward;
      const double t = (threshold - a.utility) / (b.utility - a.utility);
      return a.reward + t * (b.reward - a.reward);
    }
  }
  return hull.back().reward;
}

std::optional<double> exhaustive_optimal_value(std::span<const StageModel> stages,
                                               std::span<const double> mu0, double threshold) {
  const auto pts = enumerate_deterministic_values(stages, mu0);
  return hull_optimum(pts, threshold);
}

}  // namespace ncmdp

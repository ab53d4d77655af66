#pragma once

// Brute-force reference for the episode LP on tiny models. Achievable
// (V_g, V_r) pairs form the convex hull of the deterministic Markov policies'
// values, so the constrained optimum is read off the upper concave envelope.

#include <optional>
#include <span>
#include <vector>

#include "ncmdp/cmdp.hpp"

namespace ncmdp {

struct ValuePoint {
  double utility;
  double reward;
};

/// Values of all A^{S H} deterministic Markov policies. Throws when there are
/// more than `limit` of them.
std::vector<ValuePoint> enumerate_deterministic_values(std::span<const StageModel> stages,
                                                       std::span<const double> mu0,
                                                       long long limit = 2'000'000);

/// max reward over the convex hull of `points` subject to utility >= threshold;
/// nullopt when no point reaches the threshold.
std::optional<double> hull_optimum(std::span<const ValuePoint> points, double threshold);

std::optional<double> exhaustive_optimal_value(std::span<const StageModel> stages,
                                               std::span<const double> mu0, double threshold);

}  // namespace ncmdp

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gmmd {

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

/// Spearman's rho as the Pearson correlation of average ranks.
/// Throws UndefinedCorrelationError if either input is constant and
/// InputError on length mismatch or n < 2.
double spearman_rho(std::span<const double> xs, std::span<const double> ys);

/// Kendall's tau-b (tie corrected), O(n log n).
double kendall_tau(std::span<const double> xs, std::span<const double> ys);

double pearson_r(std::span<const double> xs, std::span<const double> ys);

enum class Statistic { Spearman, Kendall };

/// Two-sided permutation p-value: (1 + #{|stat(xs, perm(ys))| >= |stat(xs, ys)|}) / (1 + permutations).
double permutation_p_value(std::span<const double> xs, std::span<const double> ys, Statistic stat,
                           std::size_t permutations = 10'000, std::uint64_t seed = 0);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
LinearFit least_squares(std::span<const double> xs, std::span<const double> ys);

}  // namespace gmmd

#include "gmmd/rank_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "gmmd/error.hpp"

namespace gmmd {

namespace {

void check_pair(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw InputError("correlation inputs have lengths " + std::to_string(xs.size()) + " and " +
                     std::to_string(ys.size()));
  }
  if (xs.size() < 2) throw InputError("correlation needs at least 2 observations");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (std::isnan(xs[i]) || std::isnan(ys[i])) throw InputError("correlation input contains NaN");
  }
}

// Twice the average rank; always an integer.
std::vector<std::int64_t> doubled_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<std::int64_t> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    // positions i..j (0-based) share rank ((i+1) + (j+1)) / 2
    const auto doubled = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> xs) {
  const auto doubled = doubled_ranks(xs);
  std::vector<double> out(doubled.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(doubled[i]) / 2.0;
  return out;
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const auto rx = doubled_ranks(xs);
  const auto ry = doubled_ranks(ys);
  const std::size_t n = xs.size();

  double num = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  if (n <= 20'000) {
    // Exact integer moments; 4 n^4 stays below 2^63 in this range.
    std::int64_t sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += rx[i];
      sy += ry[i];
      sxx += rx[i] * rx[i];
      syy += ry[i] * ry[i];
      sxy += rx[i] * ry[i];
    }
    const auto nn = static_cast<std::int64_t>(n);
    num = static_cast<double>(nn * sxy - sx * sy);
    dx = static_cast<double>(nn * sxx - sx * sx);
    dy = static_cast<double>(nn * syy - sy * sy);
  } else {
    long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double a = rx[i], b = ry[i];
      sx += a;
      sy += b;
      sxx += a * a;
      syy += b * b;
      sxy += a * b;
    }
    const long double nn = static_cast<long double>(n);
    num = static_cast<double>(nn * sxy - sx * sy);
    dx = static_cast<double>(nn * sxx - sx * sx);
    dy = static_cast<double>(nn * syy - sy * sy);
  }
  if (dx == 0.0 || dy == 0.0) throw UndefinedCorrelationError("Spearman rho of a constant series");
  return num / std::sqrt(dx * dy);
}

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return xs[a] < xs[b] || (xs[a] == xs[b] && ys[a] < ys[b]);
  });

  // Tied pairs in x, and pairs tied in both x and y.
  std::int64_t tied_x = 0;
  std::int64_t tied_xy = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && xs[order[j]] == xs[order[i]]) ++j;
    const auto run = static_cast<std::int64_t>(j - i);
    tied_x += run * (run - 1) / 2;
    for (std::size_t a = i; a < j;) {
      std::size_t b = a + 1;
      while (b < j && ys[order[b]] == ys[order[a]]) ++b;
      const auto r = static_cast<std::int64_t>(b - a);
      tied_xy += r * (r - 1) / 2;
      a = b;
    }
    i = j;
  }

  // Merge sort the y sequence counting exchanges (discordant pairs).
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = ys[order[i]];
  std::vector<double> buffer(n);
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n);
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, k = lo;
      while (a < mid && b < hi) {
        if (y[b] < y[a]) {
          swaps += static_cast<std::int64_t>(mid - a);
          buffer[k++] = y[b++];
        } else {
          buffer[k++] = y[a++];
        }
      }
      while (a < mid) buffer[k++] = y[a++];
      while (b < hi) buffer[k++] = y[b++];
    }
    std::swap(y, buffer);
  }

  std::int64_t tied_y = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && y[j] == y[i]) ++j;
    const auto run = static_cast<std::int64_t>(j - i);
    tied_y += run * (run - 1) / 2;
    i = j;
  }

  const auto total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t concordant_minus_discordant = total - tied_x - tied_y + tied_xy - 2 * swaps;
  const std::int64_t den_x = total - tied_x;
  const std::int64_t den_y = total - tied_y;
  if (den_x == 0 || den_y == 0) throw UndefinedCorrelationError("Kendall tau of a constant series");
  return static_cast<double>(concordant_minus_discordant) /
         std::sqrt(static_cast<double>(den_x) * static_cast<double>(den_y));
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("Pearson r of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

double permutation_p_value(std::span<const double> xs, std::span<const double> ys, Statistic stat,
                           std::size_t permutations, std::uint64_t seed) {
  auto compute = [stat](std::span<const double> a, std::span<const double> b) {
    return stat == Statistic::Spearman ? spearman_rho(a, b) : kendall_tau(a, b);
  };
  const double observed = std::abs(compute(xs, ys));
  std::vector<double> shuffled(ys.begin(), ys.end());
  std::mt19937_64 rng(seed);
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (std::abs(compute(xs, shuffled)) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
}

LinearFit least_squares(std::span<const double> xs, std::span<const double> ys) {
  check_pair(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw UndefinedCorrelationError("regression on a constant x series");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

}  // namespace gmmd

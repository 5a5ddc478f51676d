#pragma once

// Independent reference implementations used only by the tests. They follow
// the textbook definitions literally (scalar loops, enumeration) and share no
// code with the library paths they check.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

// features[p][c]: feature vector of position/token p. Returns (1/P) sum_p f f^T.
inline Matrix gram(const Matrix& features) {
  const std::size_t positions = features.size();
  const std::size_t d = features.front().size();
  Matrix g(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < positions; ++p) acc += features[p][i] * features[p][j];
      g[i][j] = acc / static_cast<double>(positions);
    }
  }
  return g;
}

// Kernels and the estimator run in long double so the reference carries
// more precision than the double-precision code it checks.
inline long double rbf(const std::vector<double>& x, const std::vector<double>& y, double gamma) {
  long double s = 0.0L;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const long double d = static_cast<long double>(x[k]) - y[k];
    s += d * d;
  }
  return std::exp(-static_cast<long double>(gamma) * s);
}

inline long double poly(const std::vector<double>& x, const std::vector<double>& y) {
  long double s = 0.0L;
  for (std::size_t k = 0; k < x.size(); ++k) s += static_cast<long double>(x[k]) * y[k];
  return std::pow(s / static_cast<long double>(x.size()) + 1.0L, 3);
}

// Literal unbiased estimator: three double sums with the diagonal skipped.
template <typename Kernel>
double mmd2_unbiased(const Matrix& a, const Matrix& e, Kernel k) {
  const long double na = static_cast<long double>(a.size());
  const long double ne = static_cast<long double>(e.size());
  long double saa = 0.0L, see = 0.0L, sae = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (i != j) saa += k(a[i], a[j]);
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j)
      if (i != j) see += k(e[i], e[j]);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j) sae += k(a[i], e[j]);
  return static_cast<double>(saa / (na * (na - 1)) + see / (ne * (ne - 1)) - 2.0L * sae / (na * ne));
}

// Twice the average rank, by counting: 2 * (#less) + (#equal) + 1.
inline std::vector<std::int64_t> doubled_ranks_by_counting(const std::vector<double>& xs) {
  std::vector<std::int64_t> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::int64_t less = 0, equal = 0;
    for (double v : xs) {
      if (v < xs[i]) ++less;
      if (v == xs[i]) ++equal;
    }
    r[i] = 2 * less + equal + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = doubled_ranks_by_counting(xs);
  const auto ry = doubled_ranks_by_counting(ys);
  const auto n = static_cast<std::int64_t>(xs.size());
  std::int64_t sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
    sxy += rx[i] * ry[i];
  }
  const double num = static_cast<double>(n * sxy - sx * sy);
  const double dx = static_cast<double>(n * sxx - sx * sx);
  const double dy = static_cast<double>(n * syy - sy * sy);
  return num / std::sqrt(dx * dy);
}

// Kendall tau-b by enumerating all pairs.
inline double kendall(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::int64_t concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  const std::size_t n = xs.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xs[i] - xs[j];
      const double dy = ys[i] - ys[j];
      if (dx == 0) ++tie_x;
      if (dy == 0) ++tie_y;
      if (dx * dy > 0) ++concordant;
      if (dx * dy < 0) ++discordant;
    }
  }
  const auto total = static_cast<std::int64_t>(n * (n - 1) / 2);
  return static_cast<double>(concordant - discordant) /
         std::sqrt(static_cast<double>(total - tie_x) * static_cast<double>(total - tie_y));
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (auto& v : r) v = nd(rng);
  return m;
}

}  // namespace oracle

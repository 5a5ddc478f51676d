#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmmd/vector_set.hpp"

namespace gmmd {

enum class KernelKind { RBF, Polynomial };

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

/// RBF: k(x, y) = exp(-gamma ||x - y||^2), gamma = 1 / (2 sigma^2).
/// Polynomial: k(x, y) = (x.y / d + 1)^3 with d the vector length.
struct KernelSpec {
  KernelKind kind = KernelKind::RBF;
  double gamma = 1.0;

  static KernelSpec rbf(double gamma);
  static KernelSpec polynomial() { return {KernelKind::Polynomial, 0.0}; }

  /// Throws InputError unless an RBF gamma is finite and positive.
  void validate() const;
};

struct MmdResult {
  double mmd2 = 0.0;
  double term_anchor = 0.0;
  double term_eval = 0.0;
  double term_cross = 0.0;
  std::size_t n_anchor = 0;
  std::size_t n_eval = 0;
  double gamma_used = 0.0;
};

inline constexpr std::size_t kDefaultMaxExactPairs = 2'000'000;

double squared_distance(std::span<const double> x, std::span<const double> y);

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y);

struct MedianHeuristic {
  double gamma = 0.0;
  double median_sq_distance = 0.0;
  std::size_t pairs_used = 0;
  bool subsampled = false;
};

/// gamma_med = 1 / (2 median_{i<j} ||v_i - v_j||^2). When the number of
/// distinct pairs exceeds max_exact_pairs, max_exact_pairs pairs are drawn
/// uniformly (with replacement) using `seed`.
MedianHeuristic median_heuristic(const VectorSet& anchor,
                                 std::size_t max_exact_pairs = kDefaultMaxExactPairs,
                                 std::uint64_t seed = 0);

double median_heuristic_gamma(const VectorSet& anchor,
                              std::size_t max_exact_pairs = kDefaultMaxExactPairs,
                              std::uint64_t seed = 0);

/// Pairwise statistics the kernels are evaluated from: squared distances for
/// RBF, dot products for the polynomial kernel. Computing the table once lets
/// a bandwidth sweep reuse it.
struct PairwiseTable {
  KernelKind kind = KernelKind::RBF;
  std::size_t n_anchor = 0;
  std::size_t n_eval = 0;
  std::size_t dim = 0;
  std::vector<double> anchor_pairs;  // i < i', row-major
  std::vector<double> eval_pairs;    // j < j', row-major
  // Cross block stored with the canonical set as rows (see anchor_rows).
  std::vector<double> cross;
  bool anchor_rows = true;
};

PairwiseTable pairwise_table(const VectorSet& anchor, const VectorSet& eval, KernelKind kind,
                             unsigned threads = 1);

/// Unbiased MMD^2 with the i = i' and j = j' terms excluded. Sums run in a
/// fixed order, so results are reproducible and independent of `threads`.
/// Throws SampleSizeError when either set has fewer than 2 vectors.
MmdResult mmd2_unbiased(const VectorSet& anchor, const VectorSet& eval, const KernelSpec& spec,
                        unsigned threads = 1);

MmdResult mmd2_unbiased(const PairwiseTable& table, const KernelSpec& spec);

/// Plug-in (V-statistic) estimator including the diagonal terms.
double mmd2_biased(const VectorSet& anchor, const VectorSet& eval, const KernelSpec& spec);

/// max(mmd2, 0), for report tables only.
inline double clamp_at_zero(double mmd2) { return mmd2 < 0.0 ? 0.0 : mmd2; }

}  // namespace gmmd

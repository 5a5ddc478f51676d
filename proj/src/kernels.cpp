#include "gmmd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gmmd/error.hpp"
#include "gmmd/parallel.hpp"

namespace gmmd {

std::string to_string(KernelKind kind) { return kind == KernelKind::RBF ? "rbf" : "poly"; }

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "rbf" || name == "RBF" || name == "gaussian") return KernelKind::RBF;
  if (name == "poly" || name == "polynomial" || name == "Polynomial") return KernelKind::Polynomial;
  throw InputError("unknown kernel '" + name + "' (expected rbf or poly)");
}

KernelSpec KernelSpec::rbf(double gamma) {
  KernelSpec s{KernelKind::RBF, gamma};
  s.validate();
  return s;
}

void KernelSpec::validate() const {
  if (kind == KernelKind::RBF && !(std::isfinite(gamma) && gamma > 0.0)) {
    throw InputError("RBF gamma must be finite and positive, got " + std::to_string(gamma));
  }
}

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double diff = x[k] - y[k];
    acc += diff * diff;
  }
  return acc;
}

namespace {

double dot(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
  return acc;
}

double pair_stat(KernelKind kind, std::span<const double> x, std::span<const double> y) {
  return kind == KernelKind::RBF ? squared_distance(x, y) : dot(x, y);
}

double kernel_from_stat(const KernelSpec& spec, double stat, std::size_t dim) {
  if (spec.kind == KernelKind::RBF) return std::exp(-spec.gamma * stat);
  const double base = stat / static_cast<double>(dim) + 1.0;
  return base * base * base;
}

// k and k - 1 evaluated separately: expm1 for the RBF kernel, the expanded
// cube u^3 + 3u^2 + 3u for the polynomial one. Near k = 1 the differences
// MMD^2 is made of live in k - 1; near k = 0 they live in k itself.
struct KernelPair {
  double k = 0.0;
  double k_minus_one = 0.0;
};

KernelPair kernel_pair(const KernelSpec& spec, double stat, std::size_t dim) {
  if (spec.kind == KernelKind::RBF) {
    const double x = -spec.gamma * stat;
    return {std::exp(x), std::expm1(x)};
  }
  const double u = stat / static_cast<double>(dim);
  const double base = u + 1.0;
  return {base * base * base, u * (u * (u + 3.0) + 3.0)};
}

// Total order on sets used to pick which set indexes the rows of the cross
// block, so that mmd2(A, B) and mmd2(B, A) sum the same values in the same order.
bool set_less(const VectorSet& a, const VectorSet& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  if (a.dim() != b.dim()) return a.dim() < b.dim();
  const auto da = a.data();
  const auto db = b.data();
  return std::lexicographical_compare(da.begin(), da.end(), db.begin(), db.end());
}

std::vector<double> triangle_stats(const VectorSet& s, KernelKind kind, unsigned threads) {
  const std::size_t n = s.size();
  std::vector<double> out(n * (n - 1) / 2);
  // Offset of row i in the packed strict upper triangle.
  auto offset = [n](std::size_t i) { return i * n - i * (i + 1) / 2; };
  parallel_for(n, threads, [&](std::size_t i) {
    double* dst = out.data() + offset(i);
    for (std::size_t j = i + 1; j < n; ++j) *dst++ = pair_stat(kind, s.row(i), s.row(j));
  });
  return out;
}

void check_dims(const VectorSet& a, const VectorSet& b) {
  if (a.dim() != b.dim()) {
    throw InputError("anchor dimension " + std::to_string(a.dim()) +
                     " does not match evaluation dimension " + std::to_string(b.dim()));
  }
}

}  // namespace

double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InputError("kernel arguments have lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  spec.validate();
  if (spec.kind == KernelKind::Polynomial && x.empty()) {
    throw InputError("polynomial kernel needs non-empty vectors");
  }
  return kernel_from_stat(spec, pair_stat(spec.kind, x, y), x.size());
}

MedianHeuristic median_heuristic(const VectorSet& anchor, std::size_t max_exact_pairs,
                                 std::uint64_t seed) {
  const std::size_t n = anchor.size();
  if (n < 2) throw InputError("median heuristic needs at least 2 anchor vectors");
  const std::size_t total_pairs = n * (n - 1) / 2;

  MedianHeuristic out;
  std::vector<double> dists;
  if (max_exact_pairs == 0 || total_pairs <= max_exact_pairs) {
    dists.reserve(total_pairs);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) dists.push_back(squared_distance(anchor.row(i), anchor.row(j)));
    }
  } else {
    out.subsampled = true;
    dists.reserve(max_exact_pairs);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::uniform_int_distribution<std::size_t> second(0, n - 2);
    for (std::size_t k = 0; k < max_exact_pairs; ++k) {
      const std::size_t i = first(rng);
      std::size_t j = second(rng);
      if (j >= i) ++j;
      dists.push_back(squared_distance(anchor.row(std::min(i, j)), anchor.row(std::max(i, j))));
    }
  }
  out.pairs_used = dists.size();

  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
  double median = dists[mid];
  if (dists.size() % 2 == 0) {
    const double lower = *std::max_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  if (!(median > 0.0)) {
    throw DegenerateBandwidthError("median pairwise squared distance of the anchor set is zero");
  }
  out.median_sq_distance = median;
  out.gamma = 1.0 / (2.0 * median);
  return out;
}

double median_heuristic_gamma(const VectorSet& anchor, std::size_t max_exact_pairs, std::uint64_t seed) {
  return median_heuristic(anchor, max_exact_pairs, seed).gamma;
}

PairwiseTable pairwise_table(const VectorSet& anchor, const VectorSet& eval, KernelKind kind,
                             unsigned threads) {
  if (anchor.size() < 2 || eval.size() < 2) {
    throw SampleSizeError("unbiased MMD needs at least 2 vectors per set (anchor " +
                          std::to_string(anchor.size()) + ", eval " + std::to_string(eval.size()) + ")");
  }
  check_dims(anchor, eval);

  PairwiseTable t;
  t.kind = kind;
  t.n_anchor = anchor.size();
  t.n_eval = eval.size();
  t.dim = anchor.dim();
  t.anchor_pairs = triangle_stats(anchor, kind, threads);
  t.eval_pairs = triangle_stats(eval, kind, threads);

  t.anchor_rows = !set_less(eval, anchor);
  const VectorSet& rows = t.anchor_rows ? anchor : eval;
  const VectorSet& cols = t.anchor_rows ? eval : anchor;
  t.cross.resize(rows.size() * cols.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    double* dst = t.cross.data() + i * cols.size();
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = pair_stat(kind, rows.row(i), cols.row(j));
  });
  return t;
}

namespace {

struct Sums {
  double k = 0.0;
  double k_minus_one = 0.0;
  void add(const Sums& o) {
    k += o.k;
    k_minus_one += o.k_minus_one;
  }
  void add(const KernelPair& p) {
    k += p.k;
    k_minus_one += p.k_minus_one;
  }
};

// Sums over the packed strict upper triangle, row by row.
Sums triangle_sum(const std::vector<double>& stats, std::size_t n, const KernelSpec& spec, std::size_t dim) {
  Sums total;
  std::size_t k = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    Sums row;
    for (std::size_t j = i + 1; j < n; ++j) row.add(kernel_pair(spec, stats[k++], dim));
    total.add(row);
  }
  return total;
}

}  // namespace

MmdResult mmd2_unbiased(const PairwiseTable& t, const KernelSpec& spec) {
  if (spec.kind != t.kind) throw InputError("kernel kind does not match the pairwise table");
  spec.validate();
  const double na = static_cast<double>(t.n_anchor);
  const double ne = static_cast<double>(t.n_eval);

  const Sums s_aa = triangle_sum(t.anchor_pairs, t.n_anchor, spec, t.dim);
  const Sums s_ee = triangle_sum(t.eval_pairs, t.n_eval, spec, t.dim);

  const std::size_t n_rows = t.anchor_rows ? t.n_anchor : t.n_eval;
  const std::size_t n_cols = t.anchor_rows ? t.n_eval : t.n_anchor;
  Sums s_ae;
  for (std::size_t i = 0; i < n_rows; ++i) {
    Sums row;
    const double* src = t.cross.data() + i * n_cols;
    for (std::size_t j = 0; j < n_cols; ++j) row.add(kernel_pair(spec, src[j], t.dim));
    s_ae.add(row);
  }

  MmdResult r;
  r.n_anchor = t.n_anchor;
  r.n_eval = t.n_eval;
  r.gamma_used = spec.kind == KernelKind::RBF ? spec.gamma : 0.0;
  const double c_aa = 2.0 / (na * (na - 1.0));
  const double c_ee = 2.0 / (ne * (ne - 1.0));
  const double c_ae = 2.0 / (na * ne);
  r.term_anchor = c_aa * s_aa.k;
  r.term_eval = c_ee * s_ee.k;
  r.term_cross = c_ae * s_ae.k;
  // The constant of each term cancels (1 + 1 - 2), so MMD^2 can be formed
  // from either k or k - 1 means. Rounding error scales with the size of the
  // terms, so the form with the smaller terms wins.
  const double m_aa = c_aa * s_aa.k_minus_one;
  const double m_ee = c_ee * s_ee.k_minus_one;
  const double m_ae = c_ae * s_ae.k_minus_one;
  const double size_k = std::abs(r.term_anchor) + std::abs(r.term_eval) + std::abs(r.term_cross);
  const double size_k1 = std::abs(m_aa) + std::abs(m_ee) + std::abs(m_ae);
  r.mmd2 = size_k1 < size_k ? m_aa + m_ee - m_ae : r.term_anchor + r.term_eval - r.term_cross;
  return r;
}

MmdResult mmd2_unbiased(const VectorSet& anchor, const VectorSet& eval, const KernelSpec& spec,
                        unsigned threads) {
  spec.validate();
  return mmd2_unbiased(pairwise_table(anchor, eval, spec.kind, threads), spec);
}

double mmd2_biased(const VectorSet& anchor, const VectorSet& eval, const KernelSpec& spec) {
  if (anchor.empty() || eval.empty()) throw InputError("biased MMD needs non-empty sets");
  check_dims(anchor, eval);
  spec.validate();
  auto block_mean = [&](const VectorSet& a, const VectorSet& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < b.size(); ++j) row += kernel_eval(spec, a.row(i), b.row(j));
      total += row;
    }
    return total / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  return block_mean(anchor, anchor) + block_mean(eval, eval) - 2.0 * block_mean(anchor, eval);
}

}  // namespace gmmd

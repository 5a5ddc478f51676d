#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gmmd/error.hpp"
#include "gmmd/kernels.hpp"
#include "oracles.hpp"

using namespace gmmd;

namespace {

VectorSet to_set(const oracle::Matrix& m) { return VectorSet::from_rows(m); }

VectorSet points_1d(std::initializer_list<double> xs) {
  VectorSet s;
  for (double x : xs) s.push_back(std::vector<double>{x});
  return s;
}

}  // namespace

TEST_CASE("kernel_eval examples") {
  const std::vector<double> x{0.3, -1.2, 4.0};
  CHECK(kernel_eval(KernelSpec::rbf(0.7), x, x) == 1.0);
  const std::vector<double> a{0, 0}, b{1, 1};
  CHECK(kernel_eval(KernelSpec::rbf(0.5), a, b) == doctest::Approx(0.367879441171).epsilon(1e-12));
  const std::vector<double> ones{1, 1};
  CHECK(kernel_eval(KernelSpec::polynomial(), ones, ones) == 8.0);
  CHECK_THROWS_AS(kernel_eval(KernelSpec::polynomial(), a, x), InputError);
  CHECK_THROWS_AS(KernelSpec::rbf(0.0), InputError);
  CHECK_THROWS_AS(KernelSpec::rbf(std::nan("")), InputError);
}

TEST_CASE("median heuristic examples") {
  CHECK(median_heuristic_gamma(points_1d({0, 1, 3})) == 0.125);
  CHECK(median_heuristic_gamma(points_1d({0, 0, 2})) == 0.125);
  // even pair count: {1, 4, 9, 1, 4, 1} for {0,1,2,3} -> sorted 1 1 1 4 4 9, median 2.5
  CHECK(median_heuristic_gamma(points_1d({0, 1, 2, 3})) == 1.0 / 5.0);
  CHECK_THROWS_AS(median_heuristic_gamma(points_1d({2, 2, 2, 2})), DegenerateBandwidthError);
  CHECK_THROWS_AS(median_heuristic_gamma(points_1d({2})), InputError);
}

TEST_CASE("subsampled median heuristic is seeded and close to the exact value") {
  std::mt19937_64 rng(2);
  const auto set = to_set(oracle::random_matrix(rng, 120, 4));
  const auto exact = median_heuristic(set);
  CHECK_FALSE(exact.subsampled);
  CHECK(exact.pairs_used == 120 * 119 / 2);
  const auto sub1 = median_heuristic(set, 3000, 17);
  const auto sub2 = median_heuristic(set, 3000, 17);
  CHECK(sub1.subsampled);
  CHECK(sub1.pairs_used == 3000);
  CHECK(sub1.gamma == sub2.gamma);
  CHECK(sub1.gamma == doctest::Approx(exact.gamma).epsilon(0.05));
}

TEST_CASE("mmd2_unbiased closed-form examples") {
  SUBCASE("anchor = eval = {a, b}") {
    const auto s = to_set({{0.0, 1.0}, {1.0, 0.5}});
    const KernelSpec k = KernelSpec::rbf(0.8);
    const double t = kernel_eval(k, s.row(0), s.row(1));
    const auto r = mmd2_unbiased(s, s, k);
    CHECK(r.mmd2 == doctest::Approx(t - 1.0).epsilon(1e-15));
    CHECK(r.term_anchor == doctest::Approx(t));
    CHECK(r.term_eval == doctest::Approx(t));
    CHECK(r.term_cross == doctest::Approx(1.0 + t));
  }
  SUBCASE("identical points") {
    const auto s = to_set({{1, 2}, {1, 2}, {1, 2}});
    CHECK(mmd2_unbiased(s, s, KernelSpec::rbf(3.0)).mmd2 == 0.0);
  }
  SUBCASE("too few samples") {
    const auto one = to_set({{1, 2}});
    const auto two = to_set({{1, 2}, {2, 3}});
    CHECK_THROWS_AS(mmd2_unbiased(one, two, KernelSpec::rbf(1.0)), SampleSizeError);
    CHECK_THROWS_AS(mmd2_unbiased(two, one, KernelSpec::rbf(1.0)), SampleSizeError);
    const auto other_dim = to_set({{1, 2, 3}, {2, 3, 4}});
    CHECK_THROWS_AS(mmd2_unbiased(two, other_dim, KernelSpec::rbf(1.0)), InputError);
  }
}

TEST_CASE("mmd2_unbiased matches the literal estimator") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const auto a = oracle::random_matrix(rng, 8, 4);
    const auto e = oracle::random_matrix(rng, 8, 4, 1.5);
    const double gamma = 0.1 + 0.05 * trial;
    const double want = oracle::mmd2_unbiased(a, e, [gamma](const auto& x, const auto& y) { return oracle::rbf(x, y, gamma); });
    const auto got = mmd2_unbiased(to_set(a), to_set(e), KernelSpec::rbf(gamma));
    CHECK(std::abs(got.mmd2 - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    CHECK(got.mmd2 == doctest::Approx(got.term_anchor + got.term_eval - got.term_cross).epsilon(1e-14));
    CHECK(got.gamma_used == gamma);

    const double want_poly = oracle::mmd2_unbiased(a, e, [](const auto& x, const auto& y) { return oracle::poly(x, y); });
    const auto got_poly = mmd2_unbiased(to_set(a), to_set(e), KernelSpec::polynomial());
    CHECK(std::abs(got_poly.mmd2 - want_poly) <= 1e-12 * std::max(1.0, std::abs(want_poly)));
  }
}

TEST_CASE("mmd2_unbiased is exactly symmetric and thread-count independent") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = to_set(oracle::random_matrix(rng, 9 + trial % 4, 5));
    const auto e = to_set(oracle::random_matrix(rng, 7 + trial % 3, 5, 2.0));
    for (auto spec : {KernelSpec::rbf(0.3), KernelSpec::polynomial()}) {
      const auto ab = mmd2_unbiased(a, e, spec);
      const auto ba = mmd2_unbiased(e, a, spec);
      CHECK(ab.mmd2 == ba.mmd2);
      CHECK(ab.term_anchor == ba.term_eval);
      CHECK(mmd2_unbiased(a, e, spec, 4).mmd2 == ab.mmd2);
    }
  }
}

TEST_CASE("RBF kernel matrix is symmetric with a unit diagonal") {
  std::mt19937_64 rng(13);
  const auto s = to_set(oracle::random_matrix(rng, 10, 3));
  const auto k = KernelSpec::rbf(0.4);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(kernel_eval(k, s.row(i), s.row(i)) == 1.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
      CHECK(kernel_eval(k, s.row(i), s.row(j)) == kernel_eval(k, s.row(j), s.row(i)));
    }
  }
}

TEST_CASE("RBF MMD is invariant to a common translation") {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> v(-20, 20);
  for (int trial = 0; trial < 20; ++trial) {
    oracle::Matrix a(6, std::vector<double>(3)), e(5, std::vector<double>(3));
    for (auto& r : a)
      for (auto& x : r) x = v(rng);
    for (auto& r : e)
      for (auto& x : r) x = v(rng);
    const std::vector<double> shift{static_cast<double>(v(rng)), 1024.0, -64.0};
    auto as = a, es = e;
    for (auto& r : as)
      for (std::size_t k = 0; k < 3; ++k) r[k] += shift[k];
    for (auto& r : es)
      for (std::size_t k = 0; k < 3; ++k) r[k] += shift[k];
    const auto spec = KernelSpec::rbf(0.01);
    CHECK(mmd2_unbiased(to_set(as), to_set(es), spec).mmd2 == mmd2_unbiased(to_set(a), to_set(e), spec).mmd2);
  }
}

TEST_CASE("far-separated clusters have a vanishing cross term") {
  std::mt19937_64 rng(15);
  auto a = oracle::random_matrix(rng, 10, 2, 0.5);
  auto e = oracle::random_matrix(rng, 10, 2, 0.5);
  for (auto& r : e) r[0] += 1000.0;
  const auto r = mmd2_unbiased(to_set(a), to_set(e), KernelSpec::rbf(1.0));
  CHECK(r.term_cross == 0.0);
  CHECK(r.mmd2 == doctest::Approx(r.term_anchor + r.term_eval).epsilon(1e-15));
}

TEST_CASE("pairwise table reuse across bandwidths equals direct evaluation") {
  std::mt19937_64 rng(16);
  const auto a = to_set(oracle::random_matrix(rng, 12, 6));
  const auto e = to_set(oracle::random_matrix(rng, 15, 6));
  const auto table = pairwise_table(a, e, KernelKind::RBF);
  for (double g : {0.01, 0.1, 1.0, 10.0}) {
    CHECK(mmd2_unbiased(table, KernelSpec::rbf(g)).mmd2 == mmd2_unbiased(a, e, KernelSpec::rbf(g)).mmd2);
  }
  CHECK_THROWS_AS(mmd2_unbiased(table, KernelSpec::polynomial()), InputError);
}

TEST_CASE("mmd2_biased") {
  const auto a = to_set({{0.5, 1.0}});
  CHECK(mmd2_biased(a, a, KernelSpec::rbf(1.0)) == 0.0);
  const auto b = to_set({{1.5, -1.0}});
  const auto k = KernelSpec::rbf(0.3);
  const double kab = kernel_eval(k, a.row(0), b.row(0));
  CHECK(mmd2_biased(a, b, k) == doctest::Approx(2.0 - 2.0 * kab).epsilon(1e-14));
  CHECK_THROWS_AS(mmd2_biased(VectorSet(2), a, k), InputError);

  // Same distribution, large samples: the biased and unbiased estimators agree.
  std::mt19937_64 rng(17);
  const auto x = to_set(oracle::random_matrix(rng, 400, 3));
  const auto y = to_set(oracle::random_matrix(rng, 400, 3));
  const auto spec = KernelSpec::rbf(median_heuristic_gamma(x));
  const double biased = mmd2_biased(x, y, spec);
  CHECK(biased >= 0.0);
  CHECK(std::abs(biased - mmd2_unbiased(x, y, spec).mmd2) <= 0.01);
}

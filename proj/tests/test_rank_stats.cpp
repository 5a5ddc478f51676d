#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gmmd/error.hpp"
#include "gmmd/rank_stats.hpp"
#include "oracles.hpp"

using namespace gmmd;

TEST_CASE("spearman and kendall examples") {
  const std::vector<double> xs{1, 2, 3, 4};
  const std::vector<double> up{10, 20, 30, 40};
  const std::vector<double> down{4, 3, 2, 1};
  const std::vector<double> swapped{1, 3, 2, 4};
  CHECK(spearman_rho(xs, up) == 1.0);
  CHECK(spearman_rho(xs, down) == -1.0);
  CHECK(spearman_rho(xs, swapped) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(kendall_tau(xs, up) == 1.0);
  CHECK(kendall_tau(xs, down) == -1.0);
  CHECK(kendall_tau(xs, swapped) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("average ranks") {
  const std::vector<double> xs{3, 1, 3, 2, 3};
  CHECK(average_ranks(xs) == std::vector<double>{4, 1, 4, 2, 4});
}

TEST_CASE("correlation errors") {
  const std::vector<double> xs{1, 2, 3};
  const std::vector<double> flat{5, 5, 5};
  CHECK_THROWS_AS(spearman_rho(xs, flat), UndefinedCorrelationError);
  CHECK_THROWS_AS(kendall_tau(flat, xs), UndefinedCorrelationError);
  CHECK_THROWS_AS(spearman_rho(xs, std::vector<double>{1, 2}), InputError);
  CHECK_THROWS_AS(kendall_tau(std::vector<double>{1}, std::vector<double>{1}), InputError);
}

TEST_CASE("kendall matches pair enumeration on random tied series") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 199);
    std::uniform_int_distribution<int> v(0, 1 + trial % 12);
    std::vector<double> xs(n), ys(n);
    for (auto& x : xs) x = v(rng);
    for (auto& y : ys) y = v(rng);
    if (std::adjacent_find(xs.begin(), xs.end(), std::not_equal_to<>()) == xs.end()) continue;
    if (std::adjacent_find(ys.begin(), ys.end(), std::not_equal_to<>()) == ys.end()) continue;
    CHECK(kendall_tau(xs, ys) == oracle::kendall(xs, ys));
    CHECK(spearman_rho(xs, ys) == oracle::spearman(xs, ys));
  }
}

TEST_CASE("invariance under strictly increasing transforms") {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(12), ys(12);
    for (auto& x : xs) x = nd(rng);
    for (auto& y : ys) y = nd(rng);
    std::vector<double> tx(12), ty(12);
    std::transform(xs.begin(), xs.end(), tx.begin(), [](double v) { return std::exp(v) + 3.0; });
    std::transform(ys.begin(), ys.end(), ty.begin(), [](double v) { return v * v * v - 1.0; });
    CHECK(spearman_rho(tx, ty) == spearman_rho(xs, ys));
    CHECK(kendall_tau(tx, ty) == kendall_tau(xs, ys));

    std::vector<double> neg(12);
    std::transform(ys.begin(), ys.end(), neg.begin(), [](double v) { return -v; });
    CHECK(spearman_rho(xs, neg) == -spearman_rho(xs, ys));
    CHECK(kendall_tau(xs, neg) == -kendall_tau(xs, ys));
  }
}

TEST_CASE("rho and tau agree in sign on perturbed monotone series") {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs(10), ys(10);
    std::iota(xs.begin(), xs.end(), 1.0);
    for (std::size_t i = 0; i < 10; ++i) ys[i] = xs[i] + noise(rng);
    const double rho = spearman_rho(xs, ys);
    const double tau = kendall_tau(xs, ys);
    if (rho != 0.0 && tau != 0.0) CHECK((rho > 0) == (tau > 0));
  }
}

TEST_CASE("permutation p-value") {
  std::vector<double> xs(24);
  std::iota(xs.begin(), xs.end(), 0.0);
  const auto ys = xs;
  const double p_strong = permutation_p_value(xs, ys, Statistic::Spearman, 2000, 1);
  CHECK(p_strong == doctest::Approx(1.0 / 2001.0));
  CHECK(permutation_p_value(xs, ys, Statistic::Spearman, 2000, 1) == p_strong);

  std::mt19937_64 rng(34);
  std::normal_distribution<double> nd;
  std::vector<double> noise(24);
  for (auto& v : noise) v = nd(rng);
  const double p_null = permutation_p_value(xs, noise, Statistic::Kendall, 2000, 2);
  CHECK(p_null > 0.0);
  CHECK(p_null <= 1.0);
}

TEST_CASE("least squares") {
  const std::vector<double> xs{0, 1, 2, 3};
  const std::vector<double> ys{1, 3, 5, 7};
  const auto fit = least_squares(xs, ys);
  CHECK(fit.slope == doctest::Approx(2.0));
  CHECK(fit.intercept == doctest::Approx(1.0));
  CHECK(pearson_r(xs, ys) == doctest::Approx(1.0));
}

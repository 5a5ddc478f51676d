#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>

#include "gmmd/error.hpp"
#include "gmmd/gram.hpp"
#include "oracles.hpp"

using namespace gmmd;

namespace {

// Builds a CNN tensor whose spatial columns are the given feature vectors.
ActivationTensor cnn_from_columns(const oracle::Matrix& cols, std::size_t h, std::size_t w) {
  const std::size_t d = cols.front().size();
  std::vector<double> v(d * h * w);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < d; ++c) v[c * h * w + p] = cols[p][c];
  return ActivationTensor::cnn(d, h, w, std::move(v));
}

ActivationTensor tokens_from_rows(const oracle::Matrix& rows) {
  const std::size_t d = rows.front().size();
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return ActivationTensor::tokens(rows.size(), d, std::move(v));
}

}  // namespace

TEST_CASE("gram_from_cnn examples") {
  SUBCASE("constant single channel") {
    const auto g = gram_from_cnn(ActivationTensor::cnn(1, 2, 2, {2, 2, 2, 2}));
    CHECK(g.dim == 1);
    CHECK(g(0, 0) == 4.0);
  }
  SUBCASE("orthogonal one-hot columns") {
    const auto g = gram_from_cnn(cnn_from_columns({{1, 0}, {0, 1}}, 1, 2));
    CHECK(g.values == std::vector<double>{0.5, 0, 0, 0.5});
  }
  SUBCASE("columns (1,1),(2,0)") {
    const auto g = gram_from_cnn(cnn_from_columns({{1, 1}, {2, 0}}, 2, 1));
    CHECK(g.values == std::vector<double>{2.5, 0.5, 0.5, 0.5});
  }
}

TEST_CASE("gram_from_tokens examples") {
  CHECK(gram_from_tokens(tokens_from_rows({{3, 4}})).values == std::vector<double>{9, 12, 12, 16});
  CHECK(gram_from_tokens(tokens_from_rows({{1, 0}, {0, 1}})).values == std::vector<double>{0.5, 0, 0, 0.5});
  const auto tok = gram_from_tokens(tokens_from_rows({{1, 1}, {2, 0}}));
  CHECK(tok.values == std::vector<double>{2.5, 0.5, 0.5, 0.5});
  CHECK(tok.values == gram_from_cnn(cnn_from_columns({{1, 1}, {2, 0}}, 1, 2)).values);
}

TEST_CASE("activation tensors reject bad input") {
  CHECK_THROWS_AS(ActivationTensor::cnn(0, 1, 1, {}), InputError);
  CHECK_THROWS_AS(ActivationTensor::cnn(1, 1, 2, {1.0}), InputError);
  CHECK_THROWS_AS(ActivationTensor::cnn(1, 1, 1, {std::nan("")}), InputError);
  CHECK_THROWS_AS(ActivationTensor::tokens(0, 3, {}), InputError);
  CHECK_THROWS_AS(ActivationTensor::tokens(1, 1, {INFINITY}), InputError);
  CHECK_THROWS_AS(gram_from_tokens(ActivationTensor::cnn(1, 1, 1, {1.0})), InputError);
  CHECK_THROWS_AS(gram_from_cnn(ActivationTensor::tokens(1, 1, {1.0})), InputError);
}

TEST_CASE("gram matches the triple-loop oracle and is PSD") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 8), side(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = dim(rng), h = side(rng), w = side(rng);
    const auto cols = oracle::random_matrix(rng, h * w, d);
    const auto expected = oracle::gram(cols);
    const auto g = gram_from_cnn(cnn_from_columns(cols, h, w));
    const auto t = gram_from_tokens(tokens_from_rows(cols));
    double scale = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        CHECK(std::abs(g(i, j) - expected[i][j]) <= 1e-12);
        CHECK(std::abs(t(i, j) - expected[i][j]) <= 1e-12);
        CHECK(g(i, j) == g(j, i));
        scale = std::max(scale, std::abs(g(i, j)));
      }
    }
    Eigen::Map<const Eigen::MatrixXd> m(g.values.data(), static_cast<long>(d), static_cast<long>(d));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    CHECK(solver.eigenvalues().minCoeff() >= -1e-6 * scale);
  }
}

TEST_CASE("gram is invariant to position and token order") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> value(-8, 8);
  for (int trial = 0; trial < 50; ++trial) {
    oracle::Matrix cols(24, std::vector<double>(5));
    for (auto& c : cols)
      for (auto& v : c) v = value(rng);
    const auto base = gram_from_cnn(cnn_from_columns(cols, 4, 6));
    const auto base_tok = gram_from_tokens(tokens_from_rows(cols));
    std::shuffle(cols.begin(), cols.end(), rng);
    CHECK(gram_from_cnn(cnn_from_columns(cols, 4, 6)).values == base.values);
    CHECK(gram_from_tokens(tokens_from_rows(cols)).values == base_tok.values);
  }
}

TEST_CASE("scaling activations by alpha scales the gram by alpha squared") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> alpha_dist(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cols = oracle::random_matrix(rng, 16, 4);
    const double alpha = alpha_dist(rng);
    auto scaled = cols;
    for (auto& c : scaled)
      for (auto& v : c) v *= alpha;
    const auto g = gram_from_cnn(cnn_from_columns(cols, 4, 4));
    const auto gs = gram_from_cnn(cnn_from_columns(scaled, 4, 4));
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      CHECK(std::abs(gs.values[k] - alpha * alpha * g.values[k]) <= 1e-12 * std::max(1.0, std::abs(gs.values[k])));
    }
  }
}

TEST_CASE("vectorize_upper_tri") {
  CHECK(vectorize_upper_tri(GramMatrix{2, {1, 2, 2, 3}}).values == std::vector<double>{1, 2, 3});
  const auto id3 = vectorize_upper_tri(GramMatrix{3, {1, 0, 0, 0, 1, 0, 0, 0, 1}});
  CHECK(id3.values == std::vector<double>{1, 0, 0, 1, 0, 1});
  CHECK(id3.source_dim == 3);
  CHECK(vectorize_upper_tri(GramMatrix{1, {4}}).values == std::vector<double>{4});

  std::mt19937_64 rng(3);
  for (std::size_t d = 1; d <= 9; ++d) {
    const auto g = gram_from_tokens(tokens_from_rows(oracle::random_matrix(rng, 7, d)));
    const auto v = vectorize_upper_tri(g);
    CHECK(v.size() == upper_tri_size(d));
    CHECK(symmetric_from_upper_tri(v).values == g.values);
  }
}

TEST_CASE("vector length depends only on the channel count") {
  std::mt19937_64 rng(4);
  for (std::size_t hw : {1u, 7u, 64u, 300u}) {
    const auto v = gram_vector(cnn_from_columns(oracle::random_matrix(rng, hw, 6), hw, 1));
    CHECK(v.size() == 21);
    const auto t = gram_vector(tokens_from_rows(oracle::random_matrix(rng, hw, 6)));
    CHECK(t.size() == 21);
  }
}

TEST_CASE("fit_standardizer") {
  SUBCASE("population standard deviation") {
    const std::vector<GramVector> vs{{1, {1, 2}}, {1, {3, 4}}};
    const auto s = fit_standardizer(vs, 1e-8);
    CHECK(s.mean == std::vector<double>{2, 3});
    CHECK(s.stddev == std::vector<double>{1, 1});
    const auto applied = apply_standardizer(s, GramVector{1, {3, 4}});
    CHECK(applied.values == std::vector<double>{1, 1});
    CHECK(apply_standardizer(s, GramVector{1, {2, 3}}).values == std::vector<double>{0, 0});
  }
  SUBCASE("zero variance is floored") {
    const std::vector<GramVector> vs(4, GramVector{1, {0.5, 7}});
    const auto s = fit_standardizer(vs, 1e-8);
    CHECK(s.stddev == std::vector<double>{1e-8, 1e-8});
  }
  SUBCASE("constant component standardizes to zero") {
    const std::vector<GramVector> vs{{1, {5, 1}}, {1, {5, 2}}, {1, {5, 6}}};
    const auto s = fit_standardizer(vs);
    for (const auto& v : apply_standardizer(s, vs)) CHECK(v.values[0] == 0.0);
  }
  SUBCASE("componentwise division") {
    Standardizer s{{0, 0}, {2, 4}, 1e-8};
    CHECK(apply_standardizer(s, GramVector{1, {2, 4}}).values == std::vector<double>{1, 1});
  }
  SUBCASE("errors") {
    const std::vector<GramVector> one{{1, {1, 2}}};
    CHECK_THROWS_AS(fit_standardizer(one), FitError);
    const std::vector<GramVector> mismatch{{1, {1, 2}}, {1, {1}}};
    CHECK_THROWS_AS(fit_standardizer(mismatch), InputError);
    Standardizer s{{0, 0}, {1, 1}, 1e-8};
    CHECK_THROWS_AS(apply_standardizer(s, GramVector{1, {1}}), InputError);
  }
}

TEST_CASE("standardizer fitted on random anchors matches the population formula") {
  std::mt19937_64 rng(21);
  const auto rows = oracle::random_matrix(rng, 30, 5, 3.0);
  std::vector<GramVector> vs;
  for (const auto& r : rows) vs.push_back({2, r});
  const auto s = fit_standardizer(vs);
  for (std::size_t c = 0; c < 5; ++c) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[c];
    mean /= 30.0;
    double var = 0.0;
    for (const auto& r : rows) var += (r[c] - mean) * (r[c] - mean);
    CHECK(s.mean[c] == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s.stddev[c] == doctest::Approx(std::sqrt(var / 30.0)).epsilon(1e-14));
  }
}

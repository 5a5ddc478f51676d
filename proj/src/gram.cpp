#include "gmmd/gram.hpp"

#include <cmath>
#include <string>

#include "gmmd/error.hpp"

namespace gmmd {

namespace {

void check_finite(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw InputError("non-finite activation value at index " + std::to_string(i));
    }
  }
}

void mirror_lower(GramMatrix& g) {
  const std::size_t d = g.dim;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) g.values[i * d + j] = g.values[j * d + i];
  }
}

}  // namespace

ActivationTensor ActivationTensor::cnn(std::size_t channels, std::size_t height, std::size_t width,
                                       std::vector<double> values) {
  if (channels == 0 || height == 0 || width == 0) {
    throw InputError("CNN activation dimensions must be >= 1");
  }
  if (values.size() != channels * height * width) {
    throw InputError("CNN activation holds " + std::to_string(values.size()) +
                     " values, expected " + std::to_string(channels * height * width));
  }
  check_finite(values);
  ActivationTensor t;
  t.layout_ = Layout::CNN;
  t.dim_ = channels;
  t.height_ = height;
  t.width_ = width;
  t.values_ = std::move(values);
  return t;
}

ActivationTensor ActivationTensor::tokens(std::size_t token_count, std::size_t dim,
                                          std::vector<double> values) {
  if (token_count == 0) throw InputError("token activation has no tokens");
  if (dim == 0) throw InputError("token dimension must be >= 1");
  if (values.size() != token_count * dim) {
    throw InputError("token activation holds " + std::to_string(values.size()) +
                     " values, expected " + std::to_string(token_count * dim));
  }
  check_finite(values);
  ActivationTensor t;
  t.layout_ = Layout::Tokens;
  t.dim_ = dim;
  t.token_count_ = token_count;
  t.values_ = std::move(values);
  return t;
}

GramMatrix gram_from_cnn(const ActivationTensor& act) {
  if (act.layout() != Layout::CNN) throw InputError("gram_from_cnn expects a CNN tensor");
  const std::size_t d = act.dim();
  const std::size_t hw = act.positions();
  const auto f = act.values();
  check_finite(f);

  GramMatrix g{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    const double* fi = f.data() + i * hw;
    for (std::size_t j = i; j < d; ++j) {
      const double* fj = f.data() + j * hw;
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += fi[p] * fj[p];
      g.values[i * d + j] = acc / static_cast<double>(hw);
    }
  }
  mirror_lower(g);
  return g;
}

GramMatrix gram_from_tokens(const ActivationTensor& act) {
  if (act.layout() != Layout::Tokens) throw InputError("gram_from_tokens expects a token tensor");
  const std::size_t d = act.dim();
  const std::size_t n = act.token_count();
  if (n == 0) throw InputError("gram_from_tokens: no tokens");
  const auto p = act.values();
  check_finite(p);

  GramMatrix g{d, std::vector<double>(d * d, 0.0)};
  for (std::size_t t = 0; t < n; ++t) {
    const double* tok = p.data() + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double ti = tok[i];
      double* row = g.values.data() + i * d;
      for (std::size_t j = i; j < d; ++j) row[j] += ti * tok[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) g.values[i * d + j] /= static_cast<double>(n);
  }
  mirror_lower(g);
  return g;
}

GramMatrix gram(const ActivationTensor& act) {
  return act.layout() == Layout::CNN ? gram_from_cnn(act) : gram_from_tokens(act);
}

GramVector vectorize_upper_tri(const GramMatrix& g) {
  const std::size_t d = g.dim;
  if (g.values.size() != d * d) throw InputError("Gram matrix storage does not match its dim");
  GramVector v{d, {}};
  v.values.reserve(upper_tri_size(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) v.values.push_back(g.values[i * d + j]);
  }
  return v;
}

GramMatrix symmetric_from_upper_tri(const GramVector& v) {
  const std::size_t d = v.source_dim;
  if (v.values.size() != upper_tri_size(d)) {
    throw InputError("Gram vector length does not match d(d+1)/2");
  }
  GramMatrix g{d, std::vector<double>(d * d, 0.0)};
  std::size_t k = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      g.values[i * d + j] = v.values[k];
      g.values[j * d + i] = v.values[k];
      ++k;
    }
  }
  return g;
}

GramVector gram_vector(const ActivationTensor& act) { return vectorize_upper_tri(gram(act)); }

Standardizer fit_standardizer(std::span<const GramVector> anchor_vectors, double epsilon_floor) {
  if (anchor_vectors.size() < 2) {
    throw FitError("standardizer needs at least 2 anchor vectors, got " +
                   std::to_string(anchor_vectors.size()));
  }
  if (!(epsilon_floor > 0.0) || !std::isfinite(epsilon_floor)) {
    throw InputError("epsilon floor must be positive and finite");
  }
  const std::size_t m = anchor_vectors.front().size();
  for (const auto& v : anchor_vectors) {
    if (v.size() != m) throw InputError("anchor vectors have mismatched dimensions");
  }
  const double n = static_cast<double>(anchor_vectors.size());

  Standardizer s;
  s.epsilon_floor = epsilon_floor;
  s.mean.assign(m, 0.0);
  s.stddev.assign(m, 0.0);
  for (const auto& v : anchor_vectors) {
    for (std::size_t i = 0; i < m; ++i) s.mean[i] += v.values[i];
  }
  for (auto& mu : s.mean) mu /= n;
  for (const auto& v : anchor_vectors) {
    for (std::size_t i = 0; i < m; ++i) {
      const double c = v.values[i] - s.mean[i];
      s.stddev[i] += c * c;
    }
  }
  for (auto& sd : s.stddev) {
    sd = std::sqrt(sd / n);
    if (sd < epsilon_floor) sd = epsilon_floor;
  }
  return s;
}

GramVector apply_standardizer(const Standardizer& s, const GramVector& v) {
  if (v.size() != s.size()) {
    throw InputError("vector has " + std::to_string(v.size()) + " components, standardizer has " +
                     std::to_string(s.size()));
  }
  GramVector out{v.source_dim, std::vector<double>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) out.values[i] = (v.values[i] - s.mean[i]) / s.stddev[i];
  return out;
}

std::vector<GramVector> apply_standardizer(const Standardizer& s, std::span<const GramVector> vs) {
  std::vector<GramVector> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(apply_standardizer(s, v));
  return out;
}

}  // namespace gmmd

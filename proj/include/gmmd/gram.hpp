#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gmmd {

enum class Layout { CNN, Tokens };

/// Intermediate activations of one image.
///
/// CNN layout stores channel-major values (d x H x W): the feature of channel
/// c at spatial position p = y * W + x is values[c * H * W + p].
/// Token layout stores token-major values (N x d): component c of token n is
/// values[n * d + c]. In both layouts `dim` is the channel/embedding size d.
class ActivationTensor {
 public:
  static ActivationTensor cnn(std::size_t channels, std::size_t height, std::size_t width,
                              std::vector<double> values);
  static ActivationTensor tokens(std::size_t token_count, std::size_t dim,
                                 std::vector<double> values);

  Layout layout() const { return layout_; }
  std::size_t dim() const { return dim_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t token_count() const { return token_count_; }
  /// Number of feature vectors averaged by the Gram matrix (H*W or N).
  std::size_t positions() const { return layout_ == Layout::CNN ? height_ * width_ : token_count_; }
  std::span<const double> values() const { return values_; }

 private:
  ActivationTensor() = default;

  Layout layout_ = Layout::CNN;
  std::size_t dim_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t token_count_ = 0;
  std::vector<double> values_;
};

/// Dense symmetric d x d matrix, row-major.
struct GramMatrix {
  std::size_t dim = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
};

/// Row-major upper triangle (diagonal included) of a Gram matrix.
struct GramVector {
  std::size_t source_dim = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

constexpr std::size_t upper_tri_size(std::size_t d) { return d * (d + 1) / 2; }

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  double epsilon_floor = 1e-8;

  std::size_t size() const { return mean.size(); }
};

inline constexpr double kDefaultEpsilonFloor = 1e-8;

/// (1 / (H W)) F F^T over all spatial positions. Throws InputError on
/// non-finite activations or when called on a token tensor.
GramMatrix gram_from_cnn(const ActivationTensor& act);

/// (1 / N) P P^T over patch tokens. Special tokens must already be removed.
GramMatrix gram_from_tokens(const ActivationTensor& act);

/// Dispatches on the tensor layout.
GramMatrix gram(const ActivationTensor& act);

GramVector vectorize_upper_tri(const GramMatrix& g);

/// Inverse of vectorize_upper_tri for symmetric matrices.
GramMatrix symmetric_from_upper_tri(const GramVector& v);

/// gram + vectorize in one call.
GramVector gram_vector(const ActivationTensor& act);

/// Per-component mean and population standard deviation of the anchor
/// vectors, with deviations below `epsilon_floor` raised to it.
Standardizer fit_standardizer(std::span<const GramVector> anchor_vectors,
                              double epsilon_floor = kDefaultEpsilonFloor);

GramVector apply_standardizer(const Standardizer& s, const GramVector& v);

std::vector<GramVector> apply_standardizer(const Standardizer& s, std::span<const GramVector> vs);

}  // namespace gmmd

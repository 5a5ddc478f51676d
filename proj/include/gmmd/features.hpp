#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gmmd/backbone.hpp"
#include "gmmd/gram_cache.hpp"
#include "gmmd/image.hpp"
#include "gmmd/vector_set.hpp"

namespace gmmd {

/// Source of raw (unstandardized) Gram vectors for labelled images.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual const std::string& backbone_id() const = 0;
  virtual std::vector<int> layers() const = 0;
  virtual std::string preprocessing_hash() const = 0;
  /// result[k] holds one row per image, in image order, for layers[k].
  virtual std::vector<VectorSet> gram_vectors(std::span<const LabeledImage> images, std::span<const int> layers) = 0;

  VectorSet gram_vectors(std::span<const LabeledImage> images, int layer);
};

/// Runs a FeatureExtractor, optionally reading and filling a GramCache.
/// Images are processed in parallel; rows keep image order.
class BackboneFeatures final : public FeatureProvider {
 public:
  BackboneFeatures(std::shared_ptr<const FeatureExtractor> extractor, GramCache* cache = nullptr,
                   unsigned threads = 1);

  const std::string& backbone_id() const override { return extractor_->spec().backbone_id; }
  std::vector<int> layers() const override { return extractor_->spec().layers(); }
  std::string preprocessing_hash() const override { return prep_hash_; }
  std::vector<VectorSet> gram_vectors(std::span<const LabeledImage> images, std::span<const int> layers) override;
  using FeatureProvider::gram_vectors;

  const FeatureExtractor& extractor() const { return *extractor_; }
  std::size_t cache_hits() const { return hits_; }
  std::size_t cache_misses() const { return misses_; }

 private:
  std::shared_ptr<const FeatureExtractor> extractor_;
  GramCache* cache_;
  unsigned threads_;
  std::string prep_hash_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace gmmd

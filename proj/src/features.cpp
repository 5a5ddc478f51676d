#include "gmmd/features.hpp"

#include <atomic>
#include <optional>

#include "gmmd/error.hpp"
#include "gmmd/parallel.hpp"

namespace gmmd {

VectorSet FeatureProvider::gram_vectors(std::span<const LabeledImage> images, int layer) {
  const int layers[] = {layer};
  return std::move(gram_vectors(images, std::span<const int>(layers)).front());
}

BackboneFeatures::BackboneFeatures(std::shared_ptr<const FeatureExtractor> extractor, GramCache* cache,
                                   unsigned threads)
    : extractor_(std::move(extractor)),
      cache_(cache),
      threads_(threads),
      prep_hash_(extractor_->spec().preprocessing.hash()) {}

std::vector<VectorSet> BackboneFeatures::gram_vectors(std::span<const LabeledImage> images,
                                                      std::span<const int> layers) {
  for (int layer : layers) extractor_->spec().output_for(layer);
  // rows[i][k]: Gram vector of image i at layers[k]
  std::vector<std::vector<std::optional<GramVector>>> rows(images.size());
  std::atomic<std::size_t> hits = 0, misses = 0;

  parallel_for(images.size(), threads_, [&](std::size_t i) {
    const LabeledImage& img = images[i];
    auto& slot = rows[i];
    slot.resize(layers.size());
    std::string digest;
    std::vector<int> missing;
    std::vector<std::size_t> missing_at;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      if (cache_) {
        if (digest.empty()) digest = image_digest(img.image);
        slot[k] = cache_->get({backbone_id(), layers[k], img.id, prep_hash_, digest});
      }
      if (!slot[k]) {
        missing.push_back(layers[k]);
        missing_at.push_back(k);
      }
    }
    hits += layers.size() - missing.size();
    misses += missing.size();
    if (missing.empty()) return;
    std::vector<ActivationTensor> acts;
    try {
      acts = extractor_->extract(img.image, missing);
    } catch (const Error& e) {
      throw InferenceError(backbone_id() + ", image '" + img.id + "': " + e.what());
    }
    for (std::size_t m = 0; m < missing.size(); ++m) {
      GramVector v = gram_vector(acts[m]);
      if (cache_) cache_->put({backbone_id(), missing[m], img.id, prep_hash_, digest}, v);
      slot[missing_at[m]] = std::move(v);
    }
  });
  hits_ += hits;
  misses_ += misses;

  std::vector<VectorSet> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    VectorSet set;
    for (const auto& r : rows) set.push_back(r[k]->values);
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace gmmd

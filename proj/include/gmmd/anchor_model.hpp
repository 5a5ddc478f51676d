#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gmmd/features.hpp"
#include "gmmd/gram.hpp"
#include "gmmd/kernels.hpp"
#include "gmmd/vector_set.hpp"

namespace gmmd {

struct AnchorProvenance {
  std::vector<std::string> image_ids;
  std::uint64_t seed = 0;
  std::string preprocessing_hash;
};

/// Everything needed to score evaluation sets against an anchor: the fitted
/// standardizer, the median-heuristic bandwidth, and the standardized anchor
/// vectors it was computed on.
struct AnchorModel {
  std::string backbone_id;
  int layer_index = 0;
  std::size_t source_dim = 0;
  Standardizer standardizer;
  double gamma_med = 0.0;
  std::size_t median_pairs = 0;
  bool median_subsampled = false;
  VectorSet vectors;  // standardized, N_A x m
  AnchorProvenance provenance;

  /// Standardizes raw Gram vectors of the same backbone and layer.
  VectorSet standardize(const VectorSet& raw) const;
};

/// Fits an anchor model on raw Gram vectors (one row per anchor image).
AnchorModel fit_anchor_model(const std::string& backbone_id, int layer, const VectorSet& raw,
                             AnchorProvenance provenance, double epsilon_floor = kDefaultEpsilonFloor,
                             std::size_t max_exact_pairs = kDefaultMaxExactPairs);

/// extract -> Gram -> vectorize -> standardize -> median heuristic.
AnchorModel build_anchor_model(FeatureProvider& features, int layer, std::span<const LabeledImage> anchor_images,
                               std::uint64_t seed, double epsilon_floor = kDefaultEpsilonFloor,
                               std::size_t max_exact_pairs = kDefaultMaxExactPairs);

/// `anchor.gmmd`: a magic line, a length-prefixed JSON header (version, γ_med,
/// μ, σ, provenance) and NPY blocks for μ, σ and the standardized vectors.
void save_anchor_model(const std::filesystem::path& path, const AnchorModel& model);
AnchorModel load_anchor_model(const std::filesystem::path& path);

}  // namespace gmmd

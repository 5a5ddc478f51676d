#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gmmd/anchor_model.hpp"
#include "gmmd/degradations.hpp"
#include "gmmd/features.hpp"
#include "gmmd/kernels.hpp"

namespace gmmd {

struct GammaPolicy {
  enum class Kind { MedianMultiple, Absolute };
  Kind kind = Kind::MedianMultiple;
  double value = 1.0;  // factor of gamma_med, or gamma itself

  static GammaPolicy median_multiple(double factor) { return {Kind::MedianMultiple, factor}; }
  static GammaPolicy absolute(double gamma) { return {Kind::Absolute, gamma}; }

  double resolve(double gamma_med) const { return kind == Kind::MedianMultiple ? value * gamma_med : value; }
  std::string label() const;
};

enum class AnchorMode { Reference, Independent };

std::string to_string(AnchorMode mode);
AnchorMode anchor_mode_from_string(const std::string& name);

struct MetricConfig {
  std::string backbone_id;
  int layer_index = 1;
  KernelKind kernel = KernelKind::RBF;
  GammaPolicy gamma;
  AnchorMode anchor_mode = AnchorMode::Reference;
};

/// The ten bandwidth multiples of the search grid.
inline const std::vector<double> kPaperGammaFactors{0.01, 0.03, 0.1, 0.3, 0.5, 1, 2, 5, 10, 30};

struct GridBackbone {
  std::string backbone_id;
  int layer_count = 0;
};

/// Backbones and layer counts of the full search grid (780 configurations).
const std::vector<GridBackbone>& paper_grid_backbones();

KernelSpec resolve_kernel(const MetricConfig& config, double gamma_med);

/// Standardizes raw evaluation Gram vectors with the anchor's standardizer
/// and returns the unbiased MMD^2 against the anchor vectors.
MmdResult score_cell_detail(const VectorSet& eval_raw, const AnchorModel& anchor, const KernelSpec& kernel,
                            unsigned threads = 1);
double score_cell(const VectorSet& eval_raw, const AnchorModel& anchor, const KernelSpec& kernel,
                  unsigned threads = 1);

struct TypeResult {
  int type_id = 0;
  std::vector<double> scores;  // one per level, in level order
  double rho = 0.0;
  double tau = 0.0;
  bool failed = false;
  std::string error;
};

struct MetaResult {
  MetricConfig config;
  double gamma = 0.0;  // resolved bandwidth (0 for the polynomial kernel)
  double gamma_med = 0.0;
  std::vector<int> levels;
  std::vector<TypeResult> per_type;
  double avg_rho = 0.0;
  double avg_tau = 0.0;
  std::size_t types_used = 0;
  std::vector<std::string> warnings;
  bool failed = false;
  std::string error;
};

/// Correlates each type's scores with the severity levels and averages over
/// the types where the correlation is defined; the others are reported as
/// warnings and left out of the average.
MetaResult meta_from_scores(const MetricConfig& config, std::span<const int> levels,
                            const std::map<int, std::vector<double>>& scores_by_type);

using CellScorer = std::function<double(int type_id, int level)>;

MetaResult meta_from_scorer(const MetricConfig& config, std::span<const int> types, std::span<const int> levels,
                            const CellScorer& scorer);

struct ProtocolInputs {
  std::vector<LabeledImage> refs;
  /// Anchor images for AnchorMode::Independent; ignored (anchor = refs) in
  /// Reference mode.
  std::vector<LabeledImage> anchor;
  std::vector<int> types;   // empty = all 20
  std::vector<int> levels;  // empty = 1..10
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double epsilon_floor = kDefaultEpsilonFloor;
};

/// Anchor images implied by the mode; Independent mode requires ids disjoint
/// from the references.
std::span<const LabeledImage> anchor_images(const ProtocolInputs& in, AnchorMode mode);

/// Cache-friendly id of a degraded reference, e.g. "img3@13_T17/L05/s7".
std::string degraded_image_id(const std::string& ref_id, int type_id, int level, std::uint64_t seed);

/// Degrades the references for one cell.
std::vector<LabeledImage> degraded_cell(std::span<const LabeledImage> refs, int type_id, int level,
                                        std::uint64_t seed, unsigned threads = 1);

/// Scores every (type, level) cell against the anchor and correlates scores
/// with severity. Cells are generated and scored one at a time.
MetaResult run_meta_protocol(const ProtocolInputs& in, const MetricConfig& config, FeatureProvider& features);

/// Also returns the fitted anchor model.
MetaResult run_meta_protocol(const ProtocolInputs& in, const MetricConfig& config, FeatureProvider& features,
                             AnchorModel* anchor_out);

struct GridSource {
  FeatureProvider* features = nullptr;
  std::vector<int> layers;  // empty = every layer of the provider
};

struct GridOptions {
  std::vector<double> gamma_factors = kPaperGammaFactors;
  KernelKind kernel = KernelKind::RBF;
  AnchorMode anchor_mode = AnchorMode::Reference;
};

/// Every configuration of a grid in evaluation order: backbone, layer, factor.
std::vector<MetricConfig> grid_configs(std::span<const GridBackbone> backbones, const GridOptions& options);

/// Evaluates all (backbone, layer, factor) configurations. Each cell is
/// degraded once and its Gram vectors computed once per backbone; every
/// factor reuses the same pairwise table. Results come back ranked.
std::vector<MetaResult> grid_search(std::span<const GridSource> sources, const GridOptions& options,
                                    const ProtocolInputs& in);

/// Ranks by avgRho, then avgTau (both descending), then backbone, layer and
/// factor ascending. Failed configurations go last.
void rank_results(std::vector<MetaResult>& results);

/// One row per configuration with per-type rho/tau columns. `header_comment`
/// becomes a leading "# ..." line when non-empty.
std::string meta_results_csv(std::span<const MetaResult> ranked, const std::string& header_comment = {});

/// Per-cell scores of each configuration: one row per (config, type, level).
std::string cell_scores_csv(std::span<const MetaResult> results, const std::string& header_comment = {});

/// Fixed-width top-k table: rank, backbone, layer, gamma factor, rho, tau.
std::string top_k_table(std::span<const MetaResult> ranked, std::size_t k);

}  // namespace gmmd

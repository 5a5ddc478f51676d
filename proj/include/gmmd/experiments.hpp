#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmmd/anchor_model.hpp"
#include "gmmd/backbone.hpp"
#include "gmmd/features.hpp"
#include "gmmd/image.hpp"
#include "gmmd/kernels.hpp"
#include "gmmd/protocol.hpp"
#include "gmmd/rank_stats.hpp"

namespace gmmd {

enum class OrderingKey { DMOS, MOS };

std::string to_string(OrderingKey key);

struct OpinionEntry {
  std::string image_id;
  double score = 0.0;
  std::string source;  // RAISE manifests only
};

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF. Lines
/// starting with '#' are skipped.
std::vector<std::vector<std::string>> read_csv_rows(std::istream& in);

/// `imageId,dmos` (DMOS) or `imageId,mos,source` (MOS), with a header row.
std::vector<OpinionEntry> read_opinion_csv(std::istream& in, OrderingKey key);
std::vector<OpinionEntry> read_opinion_csv(const std::filesystem::path& path, OrderingKey key);

struct OpinionGroup {
  std::size_t rank = 0;
  std::vector<std::string> image_ids;
  std::vector<double> opinion_scores;
  double mean_score = 0.0;
};

struct GroupedDataset {
  std::vector<OpinionGroup> groups;
  std::size_t group_size = 0;
  OrderingKey ordering_key = OrderingKey::DMOS;
  bool descending = false;
};

/// Sorts by opinion score (ascending unless `descending`; ties broken by
/// imageId) and chunks into groups; group 0 holds the first chunk.
GroupedDataset build_ranked_groups(std::span<const OpinionEntry> entries, std::size_t group_size,
                                   OrderingKey key = OrderingKey::DMOS, bool descending = false);

/// Control: the same group sizes and ranks with image ids dealt out in a
/// seeded random order. Mean scores are recomputed.
GroupedDataset shuffled_groups(const GroupedDataset& ds, std::uint64_t seed);

std::string groups_csv(const GroupedDataset& ds, const std::string& header_comment = {});

/// Resolves image ids to pixels.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual bool contains(const std::string& id) const = 0;
  virtual LabeledImage load(const std::string& id) const = 0;
};

/// `<dir>/<id>` when it exists, otherwise `<dir>/<id>.{png,jpg,jpeg}`.
class DirectoryImages final : public ImageSource {
 public:
  explicit DirectoryImages(std::filesystem::path dir);
  bool contains(const std::string& id) const override;
  LabeledImage load(const std::string& id) const override;

 private:
  std::filesystem::path resolve(const std::string& id) const;
  std::filesystem::path dir_;
};

class MemoryImages final : public ImageSource {
 public:
  explicit MemoryImages(std::vector<LabeledImage> images);
  bool contains(const std::string& id) const override;
  LabeledImage load(const std::string& id) const override;

 private:
  std::map<std::string, ImageBuffer> images_;
};

/// How a group of images becomes a score: `vectors` turns images into rows,
/// `score` compares rows with the anchor and must be safe to call
/// concurrently.
struct GroupScorer {
  std::string label;
  std::function<VectorSet(std::span<const LabeledImage>)> vectors;
  std::function<double(const VectorSet&)> score;
};

/// Gram pipeline: raw Gram vectors of `anchor.layer_index`, standardized by
/// the anchor, unbiased MMD^2.
GroupScorer gram_scorer(FeatureProvider& features, const AnchorModel& anchor, const KernelSpec& kernel);

/// Flattened layer output of each image, one row per image.
VectorSet embeddings_of(const FeatureExtractor& fx, int layer, std::span<const LabeledImage> images,
                        unsigned threads = 1);

inline constexpr double kCmmdGamma = 0.005;

/// MMD^2 between raw embedding sets with an RBF kernel; no Gram step and no
/// standardization. Same estimator as the Gram pipeline.
double embedding_mmd_baseline(const VectorSet& anchor, const VectorSet& eval, double gamma, unsigned threads = 1);

/// The bandwidth a policy gives for raw embeddings (median heuristic on the
/// anchor embeddings for median multiples).
double embedding_gamma(const VectorSet& anchor, const GammaPolicy& policy, std::uint64_t seed = 0);

GroupScorer embedding_scorer(const FeatureExtractor& fx, int layer, VectorSet anchor_embeddings, double gamma,
                             unsigned threads = 1);

enum class CorrelationAxis { Rank, MeanScore };

struct GroupExperimentOptions {
  CorrelationAxis axis = CorrelationAxis::Rank;
  std::size_t permutations = 10'000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct GroupExperimentResult {
  std::string scorer;
  CorrelationAxis axis = CorrelationAxis::Rank;
  std::vector<double> x;       // group rank or mean opinion score
  std::vector<double> scores;  // one per group
  double rho = 0.0;
  double tau = 0.0;
  LinearFit fit;           // scores against x
  double p_value = 1.0;    // two-sided permutation p of rho
  std::size_t permutations = 0;
};

/// Scores every group against the anchor. All ids are checked first; missing
/// images raise InputError listing them per group.
GroupExperimentResult run_group_experiment(const GroupedDataset& groups, const ImageSource& images,
                                           const GroupScorer& scorer, const GroupExperimentOptions& options = {});

std::string group_scores_csv(const GroupedDataset& groups, const GroupExperimentResult& r,
                             const std::string& header_comment = {});
nlohmann::json group_summary_json(const GroupedDataset& groups, const GroupExperimentResult& r);

struct InversionResult {
  double score_synthetic = 0.0;  // unbiased MMD^2, may be slightly negative
  double score_real = 0.0;
  double ratio = 1.0;
  bool inverted = false;
};

/// Ratio of the two scores clipped at zero: max(s_syn, 0) / max(s_real, 0).
/// When the real score clips to zero the ratio is +inf (or 1 when both do).
InversionResult make_inversion_result(double score_synthetic, double score_real);

InversionResult run_inversion_experiment(const AnchorModel& anchor, const VectorSet& synthetic_raw,
                                         const VectorSet& real_raw, const KernelSpec& kernel, unsigned threads = 1);

struct InversionSweepRow {
  double factor = 0.0;
  double gamma = 0.0;
  InversionResult result;
};

/// RBF sweep over multiples of the anchor's gamma_med. Both tables are built
/// once and reused for every bandwidth.
std::vector<InversionSweepRow> inversion_sweep(const AnchorModel& anchor, const VectorSet& synthetic_raw,
                                               const VectorSet& real_raw, std::span<const double> factors,
                                               unsigned threads = 1);

std::string inversion_csv(std::span<const InversionSweepRow> rows, const std::string& header_comment = {});

}  // namespace gmmd

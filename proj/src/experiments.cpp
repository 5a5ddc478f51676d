#include "gmmd/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gmmd/error.hpp"
#include "gmmd/format.hpp"
#include "gmmd/parallel.hpp"

namespace gmmd {

std::string to_string(OrderingKey key) { return key == OrderingKey::DMOS ? "dmos" : "mos"; }

std::vector<std::vector<std::string>> read_csv_rows(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0;; ++i) {
      if (i == line.size()) {
        if (!quoted) break;
        // Quoted field spanning lines.
        std::string next;
        if (!std::getline(in, next)) throw InputError("CSV: unterminated quoted field");
        if (!next.empty() && next.back() == '\r') next.pop_back();
        line += "\n" + next;
      }
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          fields.back() += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.emplace_back();
      } else {
        fields.back() += c;
      }
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_score(const std::string& text, std::size_t line) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw InputError("opinion manifest row " + std::to_string(line) + ": '" + text + "' is not a number");
  return v;
}

}  // namespace

std::vector<OpinionEntry> read_opinion_csv(std::istream& in, OrderingKey key) {
  const auto rows = read_csv_rows(in);
  if (rows.empty()) throw InputError("opinion manifest is empty");
  const std::vector<std::string> expected =
      key == OrderingKey::DMOS ? std::vector<std::string>{"imageId", "dmos"}
                               : std::vector<std::string>{"imageId", "mos", "source"};
  std::vector<std::string> header;
  for (const auto& h : rows[0]) header.push_back(trim(h));
  if (header != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw InputError("opinion manifest header must be '" + want + "'");
  }
  std::vector<OpinionEntry> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != expected.size())
      throw InputError("opinion manifest row " + std::to_string(r) + ": expected " +
                       std::to_string(expected.size()) + " fields");
    OpinionEntry e;
    e.image_id = trim(row[0]);
    if (e.image_id.empty()) throw InputError("opinion manifest row " + std::to_string(r) + ": empty imageId");
    e.score = parse_score(row[1], r);
    if (key == OrderingKey::MOS) e.source = trim(row[2]);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<OpinionEntry> read_opinion_csv(const std::filesystem::path& path, OrderingKey key) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_opinion_csv(in, key);
}

namespace {

void fill_means(OpinionGroup& g) {
  g.mean_score = std::accumulate(g.opinion_scores.begin(), g.opinion_scores.end(), 0.0) /
                 static_cast<double>(g.opinion_scores.size());
}

}  // namespace

GroupedDataset build_ranked_groups(std::span<const OpinionEntry> entries, std::size_t group_size, OrderingKey key,
                                   bool descending) {
  if (group_size == 0) throw InputError("group size must be positive");
  if (entries.empty() || entries.size() % group_size != 0)
    throw InputError(std::to_string(entries.size()) + " entries do not split into groups of " +
                     std::to_string(group_size));
  std::vector<const OpinionEntry*> order;
  for (const auto& e : entries) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [descending](const OpinionEntry* a, const OpinionEntry* b) {
    if (a->score != b->score) return descending ? a->score > b->score : a->score < b->score;
    return a->image_id < b->image_id;
  });
  std::set<std::string> seen;
  for (const auto* e : order)
    if (!seen.insert(e->image_id).second) throw InputError("duplicate manifest entry for " + e->image_id);

  GroupedDataset ds;
  ds.group_size = group_size;
  ds.ordering_key = key;
  ds.descending = descending;
  for (std::size_t g = 0; g < order.size() / group_size; ++g) {
    OpinionGroup group;
    group.rank = g;
    for (std::size_t k = 0; k < group_size; ++k) {
      const auto* e = order[g * group_size + k];
      group.image_ids.push_back(e->image_id);
      group.opinion_scores.push_back(e->score);
    }
    fill_means(group);
    ds.groups.push_back(std::move(group));
  }
  return ds;
}

GroupedDataset shuffled_groups(const GroupedDataset& ds, std::uint64_t seed) {
  std::vector<std::pair<std::string, double>> pool;
  for (const auto& g : ds.groups)
    for (std::size_t k = 0; k < g.image_ids.size(); ++k) pool.emplace_back(g.image_ids[k], g.opinion_scores[k]);
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  GroupedDataset out = ds;
  std::size_t next = 0;
  for (auto& g : out.groups) {
    for (std::size_t k = 0; k < g.image_ids.size(); ++k, ++next) {
      g.image_ids[k] = pool[next].first;
      g.opinion_scores[k] = pool[next].second;
    }
    fill_means(g);
  }
  return out;
}

std::string groups_csv(const GroupedDataset& ds, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "group,imageId," << to_string(ds.ordering_key) << "\n";
  for (const auto& g : ds.groups)
    for (std::size_t k = 0; k < g.image_ids.size(); ++k)
      out << g.rank << "," << csv_field(g.image_ids[k]) << "," << format_double(g.opinion_scores[k]) << "\n";
  return out.str();
}

DirectoryImages::DirectoryImages(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) throw InputError("not a directory: " + dir_.string());
}

std::filesystem::path DirectoryImages::resolve(const std::string& id) const {
  const auto direct = dir_ / id;
  if (std::filesystem::is_regular_file(direct)) return direct;
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    auto p = dir_ / (id + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return {};
}

bool DirectoryImages::contains(const std::string& id) const { return !resolve(id).empty(); }

LabeledImage DirectoryImages::load(const std::string& id) const {
  const auto p = resolve(id);
  if (p.empty()) throw InputError("image '" + id + "' not found in " + dir_.string());
  return {id, load_image(p)};
}

MemoryImages::MemoryImages(std::vector<LabeledImage> images) {
  for (auto& im : images) images_.emplace(std::move(im.id), std::move(im.image));
}

bool MemoryImages::contains(const std::string& id) const { return images_.contains(id); }

LabeledImage MemoryImages::load(const std::string& id) const {
  const auto it = images_.find(id);
  if (it == images_.end()) throw InputError("image '" + id + "' not found");
  return {id, it->second};
}

GroupScorer gram_scorer(FeatureProvider& features, const AnchorModel& anchor, const KernelSpec& kernel) {
  if (features.backbone_id() != anchor.backbone_id)
    throw InputError("anchor was fitted on backbone '" + anchor.backbone_id + "', features come from '" +
                     features.backbone_id() + "'");
  kernel.validate();
  GroupScorer s;
  s.label = "gmmd";
  s.vectors = [&features, layer = anchor.layer_index](std::span<const LabeledImage> images) {
    return features.gram_vectors(images, layer);
  };
  s.score = [&anchor, kernel](const VectorSet& raw) { return score_cell(raw, anchor, kernel); };
  return s;
}

VectorSet embeddings_of(const FeatureExtractor& fx, int layer, std::span<const LabeledImage> images,
                        unsigned threads) {
  std::vector<std::vector<double>> rows(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    try {
      rows[i] = fx.embedding(images[i].image, layer);
    } catch (const InferenceError& e) {
      throw InferenceError(std::string(e.what()) + " (image " + images[i].id + ")");
    }
  });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].size() != rows[0].size())
      throw InputError("embedding of " + images[i].id + " has length " + std::to_string(rows[i].size()) +
                       ", expected " + std::to_string(rows[0].size()));
  return VectorSet::from_rows(rows);
}

double embedding_mmd_baseline(const VectorSet& anchor, const VectorSet& eval, double gamma, unsigned threads) {
  return mmd2_unbiased(anchor, eval, KernelSpec::rbf(gamma), threads).mmd2;
}

double embedding_gamma(const VectorSet& anchor, const GammaPolicy& policy, std::uint64_t seed) {
  if (policy.kind == GammaPolicy::Kind::Absolute) return policy.value;
  return policy.value * median_heuristic_gamma(anchor, kDefaultMaxExactPairs, seed);
}

GroupScorer embedding_scorer(const FeatureExtractor& fx, int layer, VectorSet anchor_embeddings, double gamma,
                             unsigned threads) {
  KernelSpec::rbf(gamma).validate();
  GroupScorer s;
  s.label = "embedding-mmd";
  s.vectors = [&fx, layer, threads](std::span<const LabeledImage> images) {
    return embeddings_of(fx, layer, images, threads);
  };
  s.score = [anchor = std::move(anchor_embeddings), gamma](const VectorSet& eval) {
    if (eval.dim() != anchor.dim())
      throw InputError("embedding length " + std::to_string(eval.dim()) + " differs from the anchor's " +
                       std::to_string(anchor.dim()));
    return embedding_mmd_baseline(anchor, eval, gamma);
  };
  return s;
}

GroupExperimentResult run_group_experiment(const GroupedDataset& groups, const ImageSource& images,
                                           const GroupScorer& scorer, const GroupExperimentOptions& options) {
  if (groups.groups.size() < 2) throw InputError("a group experiment needs at least 2 groups");
  std::string missing;
  std::size_t missing_count = 0;
  for (const auto& g : groups.groups) {
    std::string ids;
    for (const auto& id : g.image_ids)
      if (!images.contains(id)) {
        ids += (ids.empty() ? "" : ", ") + id;
        ++missing_count;
      }
    if (!ids.empty()) missing += "\n  group " + std::to_string(g.rank) + ": " + ids;
  }
  if (missing_count > 0) throw InputError(std::to_string(missing_count) + " images missing" + missing);

  // Features are computed group by group so only one group's pixels are held
  // at a time; the provider parallelizes within a group.
  std::vector<VectorSet> vectors;
  vectors.reserve(groups.groups.size());
  for (const auto& g : groups.groups) {
    std::vector<LabeledImage> batch;
    batch.reserve(g.image_ids.size());
    for (const auto& id : g.image_ids) batch.push_back(images.load(id));
    vectors.push_back(scorer.vectors(batch));
  }

  GroupExperimentResult r;
  r.scorer = scorer.label;
  r.axis = options.axis;
  r.scores.resize(groups.groups.size());
  parallel_for(groups.groups.size(), options.threads, [&](std::size_t g) { r.scores[g] = scorer.score(vectors[g]); });
  for (const auto& g : groups.groups)
    r.x.push_back(options.axis == CorrelationAxis::Rank ? static_cast<double>(g.rank) : g.mean_score);
  r.rho = spearman_rho(r.x, r.scores);
  r.tau = kendall_tau(r.x, r.scores);
  r.fit = least_squares(r.x, r.scores);
  r.permutations = options.permutations;
  r.p_value = options.permutations == 0
                  ? 1.0
                  : permutation_p_value(r.x, r.scores, Statistic::Spearman, options.permutations, options.seed);
  return r;
}

std::string group_scores_csv(const GroupedDataset& groups, const GroupExperimentResult& r,
                             const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "group,images,mean_" << to_string(groups.ordering_key) << ",score\n";
  for (std::size_t g = 0; g < groups.groups.size(); ++g)
    out << groups.groups[g].rank << "," << groups.groups[g].image_ids.size() << ","
        << format_double(groups.groups[g].mean_score) << "," << format_double(r.scores.at(g)) << "\n";
  return out.str();
}

nlohmann::json group_summary_json(const GroupedDataset& groups, const GroupExperimentResult& r) {
  return {
      {"scorer", r.scorer},
      {"groups", groups.groups.size()},
      {"groupSize", groups.group_size},
      {"ordering", {{"key", to_string(groups.ordering_key)},
                    {"direction", groups.descending ? "descending" : "ascending"},
                    {"group0", groups.descending ? "highest " + to_string(groups.ordering_key)
                                                 : "lowest " + to_string(groups.ordering_key)}}},
      {"axis", r.axis == CorrelationAxis::Rank ? "group rank" : "mean " + to_string(groups.ordering_key)},
      {"rho", r.rho},
      {"tau", r.tau},
      {"regression", {{"slope", r.fit.slope}, {"intercept", r.fit.intercept}}},
      {"permutationP", r.p_value},
      {"permutations", r.permutations},
  };
}

InversionResult make_inversion_result(double score_synthetic, double score_real) {
  InversionResult r;
  r.score_synthetic = score_synthetic;
  r.score_real = score_real;
  const double s = clamp_at_zero(score_synthetic);
  const double t = clamp_at_zero(score_real);
  if (t > 0.0)
    r.ratio = s / t;
  else
    r.ratio = s > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  r.inverted = r.ratio < 1.0;
  return r;
}

InversionResult run_inversion_experiment(const AnchorModel& anchor, const VectorSet& synthetic_raw,
                                         const VectorSet& real_raw, const KernelSpec& kernel, unsigned threads) {
  if (synthetic_raw.size() < 2 || real_raw.size() < 2)
    throw SampleSizeError("both evaluation sets need at least 2 images");
  return make_inversion_result(score_cell(synthetic_raw, anchor, kernel, threads),
                               score_cell(real_raw, anchor, kernel, threads));
}

std::vector<InversionSweepRow> inversion_sweep(const AnchorModel& anchor, const VectorSet& synthetic_raw,
                                               const VectorSet& real_raw, std::span<const double> factors,
                                               unsigned threads) {
  if (synthetic_raw.size() < 2 || real_raw.size() < 2)
    throw SampleSizeError("both evaluation sets need at least 2 images");
  const auto syn = pairwise_table(anchor.vectors, anchor.standardize(synthetic_raw), KernelKind::RBF, threads);
  const auto real = pairwise_table(anchor.vectors, anchor.standardize(real_raw), KernelKind::RBF, threads);
  std::vector<InversionSweepRow> rows;
  for (double f : factors) {
    const auto k = KernelSpec::rbf(f * anchor.gamma_med);
    k.validate();
    rows.push_back({f, k.gamma, make_inversion_result(mmd2_unbiased(syn, k).mmd2, mmd2_unbiased(real, k).mmd2)});
  }
  return rows;
}

std::string inversion_csv(std::span<const InversionSweepRow> rows, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "gamma_factor,gamma,score_synthetic,score_real,ratio,inverted\n";
  for (const auto& r : rows)
    out << (std::isnan(r.factor) ? std::string() : format_double(r.factor)) << "," << format_double(r.gamma) << "," << format_double(r.result.score_synthetic)
        << "," << format_double(r.result.score_real) << ","
        << (std::isinf(r.result.ratio) ? std::string("inf") : format_double(r.result.ratio)) << ","
        << (r.result.inverted ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace gmmd

#include "gmmd/protocol.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "gmmd/error.hpp"
#include "gmmd/format.hpp"
#include "gmmd/parallel.hpp"
#include "gmmd/rank_stats.hpp"

namespace gmmd {

std::string GammaPolicy::label() const {
  return kind == Kind::MedianMultiple ? format_double(value) + "x" : "abs:" + format_double(value);
}

std::string to_string(AnchorMode mode) { return mode == AnchorMode::Reference ? "reference" : "independent"; }

AnchorMode anchor_mode_from_string(const std::string& name) {
  if (name == "reference") return AnchorMode::Reference;
  if (name == "independent") return AnchorMode::Independent;
  throw UsageError("unknown anchor mode '" + name + "' (expected reference or independent)");
}

const std::vector<GridBackbone>& paper_grid_backbones() {
  static const std::vector<GridBackbone> grid{
      {"sd-vae", 17}, {"dc-ae", 16}, {"dinov2-vitb14", 14}, {"vgg19", 18}, {"lpips-vgg", 13}};
  return grid;
}

KernelSpec resolve_kernel(const MetricConfig& config, double gamma_med) {
  if (config.kernel == KernelKind::Polynomial) return KernelSpec::polynomial();
  auto spec = KernelSpec::rbf(config.gamma.resolve(gamma_med));
  spec.validate();
  return spec;
}

MmdResult score_cell_detail(const VectorSet& eval_raw, const AnchorModel& anchor, const KernelSpec& kernel,
                            unsigned threads) {
  return mmd2_unbiased(anchor.vectors, anchor.standardize(eval_raw), kernel, threads);
}

double score_cell(const VectorSet& eval_raw, const AnchorModel& anchor, const KernelSpec& kernel, unsigned threads) {
  return score_cell_detail(eval_raw, anchor, kernel, threads).mmd2;
}

MetaResult meta_from_scores(const MetricConfig& config, std::span<const int> levels,
                            const std::map<int, std::vector<double>>& scores_by_type) {
  MetaResult r;
  r.config = config;
  r.levels.assign(levels.begin(), levels.end());
  const std::vector<double> xs(levels.begin(), levels.end());
  double sum_rho = 0.0, sum_tau = 0.0;
  for (const auto& [type, scores] : scores_by_type) {
    TypeResult t;
    t.type_id = type;
    t.scores = scores;
    try {
      t.rho = spearman_rho(xs, scores);
      t.tau = kendall_tau(xs, scores);
      sum_rho += t.rho;
      sum_tau += t.tau;
      ++r.types_used;
    } catch (const Error& e) {
      t.failed = true;
      t.error = e.what();
      r.warnings.push_back("type " + std::to_string(type) + " excluded from averages: " + t.error);
    }
    r.per_type.push_back(std::move(t));
  }
  if (r.types_used == 0) {
    r.failed = true;
    r.error = "no degradation type has a defined correlation";
  } else {
    r.avg_rho = sum_rho / static_cast<double>(r.types_used);
    r.avg_tau = sum_tau / static_cast<double>(r.types_used);
  }
  return r;
}

MetaResult meta_from_scorer(const MetricConfig& config, std::span<const int> types, std::span<const int> levels,
                            const CellScorer& scorer) {
  std::map<int, std::vector<double>> scores;
  for (int t : types)
    for (int l : levels) scores[t].push_back(scorer(t, l));
  return meta_from_scores(config, levels, scores);
}

std::span<const LabeledImage> anchor_images(const ProtocolInputs& in, AnchorMode mode) {
  if (mode == AnchorMode::Reference) return in.refs;
  if (in.anchor.empty()) throw InputError("independent anchor mode needs a separate anchor set");
  std::set<std::string> ref_ids;
  for (const auto& r : in.refs) ref_ids.insert(r.id);
  for (const auto& a : in.anchor) {
    if (ref_ids.count(a.id)) throw InputError("anchor image '" + a.id + "' is also a reference image");
  }
  return in.anchor;
}

std::string degraded_image_id(const std::string& ref_id, int type_id, int level, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/L%02d/s", level);
  return ref_id + "@" + degradation_dir_name(type_id) + buf + std::to_string(seed);
}

std::vector<LabeledImage> degraded_cell(std::span<const LabeledImage> refs, int type_id, int level,
                                        std::uint64_t seed, unsigned threads) {
  const auto spec = DegradationSpec::resolve(type_id, level);
  std::vector<LabeledImage> out(refs.size());
  parallel_for(refs.size(), threads, [&](std::size_t i) {
    out[i].id = degraded_image_id(refs[i].id, type_id, level, seed);
    out[i].image = degrade(refs[i].image, spec, cell_seed(seed, type_id, level, i));
  });
  return out;
}

namespace {

std::vector<int> or_default(const std::vector<int>& v, std::vector<int> fallback) {
  return v.empty() ? fallback : v;
}

std::string cell_name(int type, int level) {
  return "cell (type " + std::to_string(type) + ", level " + std::to_string(level) + ")";
}

double factor_of(const MetricConfig& c) {
  return c.kernel == KernelKind::Polynomial ? 0.0 : c.gamma.value;
}

}  // namespace

MetaResult run_meta_protocol(const ProtocolInputs& in, const MetricConfig& config, FeatureProvider& features) {
  return run_meta_protocol(in, config, features, nullptr);
}

MetaResult run_meta_protocol(const ProtocolInputs& in, const MetricConfig& config, FeatureProvider& features,
                             AnchorModel* anchor_out) {
  if (in.refs.size() < 2) throw SampleSizeError("the protocol needs at least 2 reference images");
  const auto types = or_default(in.types, all_type_ids());
  const auto levels = or_default(in.levels, all_levels());
  const auto anchor_set = anchor_images(in, config.anchor_mode);
  const AnchorModel anchor = build_anchor_model(features, config.layer_index, anchor_set, in.seed, in.epsilon_floor);
  const KernelSpec kernel = resolve_kernel(config, anchor.gamma_med);

  std::map<int, std::vector<double>> scores;
  for (int t : types) {
    for (int l : levels) {
      const auto cell = degraded_cell(in.refs, t, l, in.seed, in.threads);
      VectorSet raw;
      try {
        raw = features.gram_vectors(cell, config.layer_index);
      } catch (const Error& e) {
        throw InferenceError(cell_name(t, l) + ": " + e.what());
      }
      scores[t].push_back(score_cell(raw, anchor, kernel, in.threads));
    }
  }
  MetaResult r = meta_from_scores(config, levels, scores);
  r.gamma = kernel.kind == KernelKind::RBF ? kernel.gamma : 0.0;
  r.gamma_med = anchor.gamma_med;
  if (anchor_out) *anchor_out = anchor;
  return r;
}

std::vector<MetricConfig> grid_configs(std::span<const GridBackbone> backbones, const GridOptions& options) {
  std::vector<MetricConfig> out;
  for (const auto& b : backbones) {
    for (int layer = 1; layer <= b.layer_count; ++layer) {
      MetricConfig c;
      c.backbone_id = b.backbone_id;
      c.layer_index = layer;
      c.kernel = options.kernel;
      c.anchor_mode = options.anchor_mode;
      if (options.kernel == KernelKind::Polynomial) {
        out.push_back(c);
        continue;
      }
      for (double f : options.gamma_factors) {
        c.gamma = GammaPolicy::median_multiple(f);
        out.push_back(c);
      }
    }
  }
  return out;
}

std::vector<MetaResult> grid_search(std::span<const GridSource> sources, const GridOptions& options,
                                    const ProtocolInputs& in) {
  if (in.refs.size() < 2) throw SampleSizeError("the protocol needs at least 2 reference images");
  if (options.kernel == KernelKind::RBF && options.gamma_factors.empty()) {
    throw InputError("grid search needs at least one gamma factor");
  }
  const auto types = or_default(in.types, all_type_ids());
  const auto levels = or_default(in.levels, all_levels());
  const auto anchor_set = anchor_images(in, options.anchor_mode);

  // One slot per (backbone, layer); each holds its factor configurations.
  struct Slot {
    FeatureProvider* features;
    std::vector<MetricConfig> configs;
    std::vector<KernelSpec> kernels;
    std::vector<std::map<int, std::vector<double>>> scores;
    AnchorModel anchor;
    bool failed = false;
    std::string error;
  };
  struct Source {
    FeatureProvider* features;
    std::vector<int> layers;
    std::vector<std::size_t> slots;
    bool failed = false;
    std::string error;
  };

  std::vector<Slot> slots;
  std::vector<Source> srcs;
  for (const auto& s : sources) {
    if (!s.features) throw InputError("grid source without a feature provider");
    Source src{s.features, s.layers.empty() ? s.features->layers() : s.layers, {}, false, {}};
    const std::vector<GridBackbone> one_layer{{s.features->backbone_id(), 1}};
    for (int layer : src.layers) {
      Slot slot;
      slot.features = s.features;
      for (auto c : grid_configs(one_layer, options)) {
        c.layer_index = layer;
        slot.configs.push_back(c);
      }
      slot.scores.resize(slot.configs.size());
      src.slots.push_back(slots.size());
      slots.push_back(std::move(slot));
    }
    srcs.push_back(std::move(src));
  }

  for (auto& src : srcs) {
    std::vector<VectorSet> raw;
    try {
      raw = src.features->gram_vectors(anchor_set, src.layers);
    } catch (const Error& e) {
      src.failed = true;
      src.error = std::string("anchor features: ") + e.what();
      continue;
    }
    for (std::size_t k = 0; k < src.layers.size(); ++k) {
      Slot& slot = slots[src.slots[k]];
      try {
        AnchorProvenance prov{{}, in.seed, src.features->preprocessing_hash()};
        for (const auto& im : anchor_set) prov.image_ids.push_back(im.id);
        slot.anchor = fit_anchor_model(src.features->backbone_id(), src.layers[k], raw[k], std::move(prov),
                                       in.epsilon_floor);
        for (const auto& c : slot.configs) slot.kernels.push_back(resolve_kernel(c, slot.anchor.gamma_med));
      } catch (const Error& e) {
        slot.failed = true;
        slot.error = std::string("anchor model: ") + e.what();
      }
    }
  }

  for (int t : types) {
    for (int l : levels) {
      const auto cell = degraded_cell(in.refs, t, l, in.seed, in.threads);
      for (auto& src : srcs) {
        if (src.failed) continue;
        std::vector<VectorSet> raw;
        try {
          raw = src.features->gram_vectors(cell, src.layers);
        } catch (const Error& e) {
          src.failed = true;
          src.error = cell_name(t, l) + ": " + e.what();
          continue;
        }
        for (std::size_t k = 0; k < src.layers.size(); ++k) {
          Slot& slot = slots[src.slots[k]];
          if (slot.failed) continue;
          try {
            const auto eval = slot.anchor.standardize(raw[k]);
            const auto table = pairwise_table(slot.anchor.vectors, eval, options.kernel, in.threads);
            for (std::size_t c = 0; c < slot.configs.size(); ++c) {
              slot.scores[c][t].push_back(mmd2_unbiased(table, slot.kernels[c]).mmd2);
            }
          } catch (const Error& e) {
            slot.failed = true;
            slot.error = cell_name(t, l) + ": " + e.what();
          }
        }
      }
    }
  }

  std::vector<MetaResult> results;
  for (const auto& src : srcs) {
    for (std::size_t idx : src.slots) {
      const Slot& slot = slots[idx];
      for (std::size_t c = 0; c < slot.configs.size(); ++c) {
        MetaResult r;
        if (src.failed || slot.failed) {
          r.config = slot.configs[c];
          r.levels = levels;
          r.failed = true;
          r.error = src.failed ? src.error : slot.error;
        } else {
          r = meta_from_scores(slot.configs[c], levels, slot.scores[c]);
          r.gamma = slot.kernels[c].kind == KernelKind::RBF ? slot.kernels[c].gamma : 0.0;
          r.gamma_med = slot.anchor.gamma_med;
        }
        results.push_back(std::move(r));
      }
    }
  }
  rank_results(results);
  return results;
}

void rank_results(std::vector<MetaResult>& results) {
  std::stable_sort(results.begin(), results.end(), [](const MetaResult& a, const MetaResult& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed) {
      if (a.avg_rho != b.avg_rho) return a.avg_rho > b.avg_rho;
      if (a.avg_tau != b.avg_tau) return a.avg_tau > b.avg_tau;
    }
    if (a.config.backbone_id != b.config.backbone_id) return a.config.backbone_id < b.config.backbone_id;
    if (a.config.layer_index != b.config.layer_index) return a.config.layer_index < b.config.layer_index;
    return factor_of(a.config) < factor_of(b.config);
  });
}

namespace {

std::vector<int> union_types(std::span<const MetaResult> results) {
  std::set<int> types;
  for (const auto& r : results)
    for (const auto& t : r.per_type) types.insert(t.type_id);
  return {types.begin(), types.end()};
}

std::string policy_kind(const MetricConfig& c) {
  if (c.kernel == KernelKind::Polynomial) return "none";
  return c.gamma.kind == GammaPolicy::Kind::MedianMultiple ? "median-multiple" : "absolute";
}

}  // namespace

std::string meta_results_csv(std::span<const MetaResult> ranked, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  const auto types = union_types(ranked);
  out << "rank,backbone,layer,kernel,anchor_mode,gamma_policy,gamma_value,gamma_med,gamma,avg_rho,avg_tau,types_used,"
         "status";
  for (int t : types) out << ",rho_" << t << ",tau_" << t;
  out << "\n";
  std::size_t rank = 0;
  for (const auto& r : ranked) {
    const auto& c = r.config;
    out << (r.failed ? std::string() : std::to_string(++rank)) << "," << csv_field(c.backbone_id) << ","
        << c.layer_index << "," << to_string(c.kernel) << "," << to_string(c.anchor_mode) << "," << policy_kind(c)
        << "," << (c.kernel == KernelKind::RBF ? format_double(c.gamma.value) : "") << ",";
    if (r.failed) {
      out << ",,,," << r.types_used << "," << csv_field("failed: " + r.error);
      for (std::size_t k = 0; k < types.size(); ++k) out << ",,";
      out << "\n";
      continue;
    }
    out << format_double(r.gamma_med) << "," << format_double(r.gamma) << "," << format_double(r.avg_rho) << ","
        << format_double(r.avg_tau) << "," << r.types_used << "," << (r.warnings.empty() ? "ok" : "partial");
    for (int t : types) {
      const auto it = std::find_if(r.per_type.begin(), r.per_type.end(), [&](const auto& x) { return x.type_id == t; });
      if (it == r.per_type.end() || it->failed) {
        out << ",,";
      } else {
        out << "," << format_double(it->rho) << "," << format_double(it->tau);
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string cell_scores_csv(std::span<const MetaResult> results, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "backbone,layer,kernel,gamma_value,gamma,type_id,kadid_tag,level,score\n";
  for (const auto& r : results) {
    if (r.failed) continue;
    for (const auto& t : r.per_type) {
      for (std::size_t i = 0; i < t.scores.size(); ++i) {
        out << csv_field(r.config.backbone_id) << "," << r.config.layer_index << "," << to_string(r.config.kernel)
            << "," << (r.config.kernel == KernelKind::RBF ? format_double(r.config.gamma.value) : "") << ","
            << format_double(r.gamma) << "," << t.type_id << "," << degradation_type(t.type_id).kadid_tag << ","
            << r.levels.at(i) << "," << format_double(t.scores[i]) << "\n";
      }
    }
  }
  return out.str();
}

std::string top_k_table(std::span<const MetaResult> ranked, std::size_t k) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%4s  %-16s %5s %9s %8s %8s\n", "rank", "backbone", "layer", "gamma", "rho",
                "tau");
  out << line;
  std::size_t rank = 0;
  for (const auto& r : ranked) {
    if (r.failed || rank == k) break;
    const std::string factor = r.config.kernel == KernelKind::Polynomial ? "poly" : r.config.gamma.label();
    std::snprintf(line, sizeof line, "%4zu  %-16s %5d %9s %8.4f %8.4f\n", ++rank, r.config.backbone_id.c_str(),
                  r.config.layer_index, factor.c_str(), r.avg_rho, r.avg_tau);
    out << line;
  }
  return out.str();
}

}  // namespace gmmd

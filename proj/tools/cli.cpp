#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "gmmd/anchor_model.hpp"
#include "gmmd/backbone.hpp"
#include "gmmd/degradations.hpp"
#include "gmmd/error.hpp"
#include "gmmd/experiments.hpp"
#include "gmmd/format.hpp"
#include "gmmd/gram_cache.hpp"
#include "gmmd/plots.hpp"
#include "gmmd/protocol.hpp"
#include "gmmd/synthetic.hpp"
#include "gmmd/version.hpp"
#include "run_spec.hpp"

namespace gmmd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  const RunSpec& spec;
  std::ostream& out;
  std::ostream& err;
  bool dry_run = false;
  unsigned threads = 1;
  fs::path out_dir;
};

struct Command {
  std::string name;
  std::string help;
  std::vector<OptionDef> options;
  std::function<int(Context&)> run;
};

// ---------------------------------------------------------------- helpers

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
  if (!out) throw InputError("write failed: " + path.string());
}

std::string stamped_svg(const RunSpec& spec, const std::string& svg) { return "<!-- " + spec.stamp() + " -->\n" + svg; }

void write_run_record(Context& ctx) {
  json j{{"toolkitVersion", kVersion},
         {"command", ctx.spec.command()},
         {"specHash", ctx.spec.hash()},
         {"spec", ctx.spec.hashed_values()}};
  write_file(ctx.out_dir / "run.json", j.dump(2) + "\n");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw UsageError(what + " is not a directory: " + p.string());
}

bool is_bundle_dir(const fs::path& p) { return fs::is_regular_file(p / kManifestFile); }

// Image sets: a directory of PNG/JPEG files or a synthetic texture set.
std::size_t check_images(const RunSpec& spec, const std::string& key) {
  const auto& v = spec.raw(key);
  if (v.is_object()) return v["synthetic"]["count"].get<std::size_t>();
  const fs::path dir = v.get<std::string>();
  require_dir(dir, flag_name(key));
  const auto files = list_images(dir);
  if (files.empty()) throw UsageError(flag_name(key) + ": no PNG or JPEG files in " + dir.string());
  return files.size();
}

std::vector<LabeledImage> load_images(const RunSpec& spec, const std::string& key) {
  const auto& v = spec.raw(key);
  if (v.is_object()) {
    const auto& s = v["synthetic"];
    return synthetic_textures(s["count"].get<std::size_t>(), s["size"].get<std::size_t>(), TextureFamily{},
                              s["seed"].get<std::uint64_t>(), key);
  }
  return load_image_dir(v.get<std::string>());
}

std::string describe_images(const RunSpec& spec, const std::string& key) {
  const auto& v = spec.raw(key);
  if (v.is_object()) {
    const auto& s = v["synthetic"];
    return std::to_string(s["count"].get<int>()) + " synthetic textures " + std::to_string(s["size"].get<int>()) +
           "px (seed " + std::to_string(s["seed"].get<int>()) + ")";
  }
  return v.get<std::string>();
}

// Backbones: "pixel-patch" or a sidecar path.
BackboneSpec check_backbone(const std::string& id) {
  if (id == kPixelPatchId) return make_pixel_patch_backbone()->spec();
  require_file(id, "backbone sidecar");
  BackboneSpec spec;
  try {
    spec = BackboneSpec::load(id);
  } catch (const InputError& e) {
    throw UsageError(std::string("backbone sidecar ") + id + ": " + e.what());
  }
  require_file(spec.model_file, "model file of " + spec.backbone_id);
  return spec;
}

std::unique_ptr<GramCache> open_cache(const RunSpec& spec) {
  if (spec.flag("noCache")) return nullptr;
  if (spec.has("cacheDir")) return std::make_unique<GramCache>(spec.path("cacheDir"));
  if (const char* env = std::getenv("GMMD_CACHE_DIR"); env && *env) return std::make_unique<GramCache>(env);
  return nullptr;
}

struct Features {
  std::shared_ptr<const FeatureExtractor> extractor;
  std::unique_ptr<BackboneFeatures> provider;
};

Features open_features(const std::string& id, GramCache* cache, unsigned threads) {
  Features f;
  f.extractor = open_backbone(id);
  f.provider = std::make_unique<BackboneFeatures>(f.extractor, cache, threads);
  return f;
}

KernelKind kernel_of(const RunSpec& spec) {
  try {
    return kernel_kind_from_string(spec.str("kernel"));
  } catch (const Error& e) {
    throw UsageError(std::string("--kernel: ") + e.what());
  }
}

// --gamma-factor and --gamma are exclusive; default is 1 x gamma_med.
GammaPolicy gamma_policy(const RunSpec& spec, std::optional<double> default_absolute = std::nullopt) {
  if (spec.has("gammaFactor") && spec.has("gamma")) throw UsageError("--gamma-factor and --gamma are exclusive");
  GammaPolicy p;
  if (spec.has("gamma"))
    p = GammaPolicy::absolute(spec.real("gamma"));
  else if (spec.has("gammaFactor"))
    p = GammaPolicy::median_multiple(spec.real("gammaFactor"));
  else if (default_absolute)
    p = GammaPolicy::absolute(*default_absolute);
  else
    p = GammaPolicy::median_multiple(1.0);
  if (!(p.value > 0.0)) throw UsageError("bandwidth must be positive");
  return p;
}

std::vector<int> check_types(const RunSpec& spec) {
  if (!spec.has("types")) return all_type_ids();
  auto types = spec.ints("types");
  for (int t : types)
    if (t < 1 || t > static_cast<int>(kDegradationTypes)) throw UsageError("--types: no degradation type " + std::to_string(t));
  return types;
}

std::vector<int> check_levels(const RunSpec& spec) {
  if (!spec.has("levels")) return all_levels();
  auto levels = spec.ints("levels");
  for (int l : levels)
    if (l < 1 || l > static_cast<int>(kSeverityLevels)) throw UsageError("--levels: no severity level " + std::to_string(l));
  if (levels.size() < 2) throw UsageError("--levels: at least 2 levels are needed for a correlation");
  return levels;
}

AnchorMode anchor_mode_of(const RunSpec& spec) { return anchor_mode_from_string(spec.str("anchorMode")); }

void check_layer(const BackboneSpec& b, int layer) {
  const auto layers = b.layers();
  if (std::find(layers.begin(), layers.end(), layer) == layers.end())
    throw UsageError("backbone " + b.backbone_id + " has no layer " + std::to_string(layer));
}

void print_plan(Context& ctx, const std::vector<std::pair<std::string, std::string>>& lines) {
  ctx.out << "plan for gmmd " << ctx.spec.command() << " (spec " << ctx.spec.hash() << ")\n";
  for (const auto& [k, v] : lines) ctx.out << "  " << k << ": " << v << "\n";
}

std::string join(const std::vector<int>& xs) {
  std::string s;
  for (int x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

std::string join(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) s += (s.empty() ? "" : ",") + format_double(x);
  return s;
}

// ---------------------------------------------------------------- degrade

int cmd_degrade(Context& ctx) {
  const auto& spec = ctx.spec;
  const auto n = check_images(spec, "refs");
  const auto types = check_types(spec);
  const auto levels = spec.has("levels") ? spec.ints("levels") : all_levels();
  for (int l : levels)
    if (l < 1 || l > static_cast<int>(kSeverityLevels)) throw UsageError("--levels: no severity level " + std::to_string(l));
  if (ctx.dry_run) {
    print_plan(ctx, {{"refs", describe_images(spec, "refs") + " (" + std::to_string(n) + " images)"},
                     {"types", join(types)},
                     {"levels", join(levels)},
                     {"seed", std::to_string(spec.seed())},
                     {"images to write", std::to_string(n * types.size() * levels.size())},
                     {"out", ctx.out_dir.string()}});
    return 0;
  }
  const auto refs = load_images(spec, "refs");
  std::ostringstream cells;
  cells << "# " << spec.stamp() << "\ntype_id,kadid_tag,name,level,params\n";
  std::size_t written = 0;
  for (int t : types) {
    const auto& type = degradation_type(t);
    for (int l : levels) {
      const auto cell = degraded_cell(refs, t, l, spec.seed(), ctx.threads);
      char level_dir[8];
      std::snprintf(level_dir, sizeof level_dir, "L%02d", l);
      const auto dir = ctx.out_dir / degradation_dir_name(t) / level_dir;
      fs::create_directories(dir);
      for (std::size_t i = 0; i < cell.size(); ++i) save_png(dir / (refs[i].id + ".png"), cell[i].image);
      written += cell.size();
      std::string params;
      for (const auto& [k, v] : severity_params(t, l)) params += (params.empty() ? "" : ";") + k + "=" + format_double(v);
      cells << t << "," << type.kadid_tag << "," << csv_field(std::string(type.name)) << "," << l << ","
            << csv_field(params) << "\n";
    }
  }
  write_file(ctx.out_dir / "degradations.csv", cells.str());
  write_run_record(ctx);
  ctx.out << "wrote " << written << " degraded images to " << ctx.out_dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- anchor

int cmd_anchor(Context& ctx) {
  const auto& spec = ctx.spec;
  const bool from_vectors = spec.has("vectors");
  if (from_vectors == spec.has("refs")) throw UsageError("give exactly one of --refs and --vectors");
  const auto max_pairs = spec.integer("maxExactPairs");
  if (max_pairs < 1) throw UsageError("--max-exact-pairs must be positive");
  const double eps = spec.real("epsilonFloor");
  if (!(eps > 0.0)) throw UsageError("--epsilon-floor must be positive");

  if (from_vectors) {
    require_file(spec.path("vectors") / kManifestFile, "vector bundle manifest");
    if (ctx.dry_run) {
      print_plan(ctx, {{"vectors", spec.path("vectors").string()}, {"out", (ctx.out_dir / "anchor.gmmd").string()}});
      return 0;
    }
    std::vector<std::string> warnings;
    const auto bundle = read_vector_bundle(spec.path("vectors"), &warnings);
    for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";
    if (bundle.kind != "gram") throw InputError("anchor vectors must be a gram bundle, got '" + bundle.kind + "'");
    AnchorProvenance prov;
    prov.seed = spec.seed();
    for (const auto& r : bundle.records) prov.image_ids.push_back(r.id);
    if (!bundle.records.empty()) prov.preprocessing_hash = bundle.records.front().preprocessing_hash;
    const auto model = fit_anchor_model(bundle.backbone_id, bundle.layer_index, bundle.vectors, prov, eps,
                                        static_cast<std::size_t>(max_pairs));
    save_anchor_model(ctx.out_dir / "anchor.gmmd", model);
    write_run_record(ctx);
    ctx.out << "anchor " << model.backbone_id << " layer " << model.layer_index << ": " << model.vectors.size()
            << " vectors, gamma_med " << format_double(model.gamma_med) << "\n";
    return 0;
  }

  const auto n = check_images(spec, "refs");
  const auto backbone = check_backbone(spec.str("backbone"));
  const int layer = static_cast<int>(spec.integer("layer"));
  check_layer(backbone, layer);
  if (ctx.dry_run) {
    print_plan(ctx, {{"refs", describe_images(spec, "refs") + " (" + std::to_string(n) + " images)"},
                     {"backbone", backbone.backbone_id},
                     {"layer", std::to_string(layer)},
                     {"out", (ctx.out_dir / "anchor.gmmd").string()}});
    return 0;
  }
  auto cache = open_cache(spec);
  auto f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
  const auto refs = load_images(spec, "refs");
  const auto model =
      build_anchor_model(*f.provider, layer, refs, spec.seed(), eps, static_cast<std::size_t>(max_pairs));
  if (cache) cache->flush();
  save_anchor_model(ctx.out_dir / "anchor.gmmd", model);
  write_run_record(ctx);
  ctx.out << "anchor " << model.backbone_id << " layer " << layer << ": " << model.vectors.size()
          << " vectors of length " << model.vectors.dim() << ", gamma_med " << format_double(model.gamma_med)
          << (model.median_subsampled ? " (subsampled pairs)" : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------- features

int cmd_features(Context& ctx) {
  const auto& spec = ctx.spec;
  const auto n = check_images(spec, "images");
  const auto backbone = check_backbone(spec.str("backbone"));
  const auto layers = spec.has("layers") ? spec.ints("layers") : backbone.layers();
  for (int l : layers) check_layer(backbone, l);
  const bool embedding = spec.flag("embedding");
  if (ctx.dry_run) {
    print_plan(ctx, {{"images", describe_images(spec, "images") + " (" + std::to_string(n) + " images)"},
                     {"backbone", backbone.backbone_id},
                     {"layers", join(layers)},
                     {"kind", embedding ? "embedding" : "gram"},
                     {"out", ctx.out_dir.string()}});
    return 0;
  }
  auto cache = open_cache(spec);
  auto f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
  const auto images = load_images(spec, "images");
  std::vector<VectorSet> sets;
  if (embedding) {
    for (int l : layers) sets.push_back(embeddings_of(*f.extractor, l, images, ctx.threads));
  } else {
    sets = f.provider->gram_vectors(images, layers);
  }
  if (cache) cache->flush();
  const auto prep = f.provider->preprocessing_hash();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    VectorBundle b;
    b.kind = embedding ? "embedding" : "gram";
    b.backbone_id = backbone.backbone_id;
    b.layer_index = layers[k];
    b.source_dim = embedding ? 0 : source_dim_for(sets[k].dim());
    for (const auto& im : images) b.records.push_back({im.id, prep, image_digest(im.image)});
    b.vectors = std::move(sets[k]);
    const auto dir = ctx.out_dir / backbone.backbone_id / std::to_string(layers[k]);
    write_vector_bundle(dir, b);
    ctx.out << "layer " << layers[k] << ": " << b.vectors.size() << " x " << b.vectors.dim() << " -> " << dir.string()
            << "\n";
  }
  write_run_record(ctx);
  return 0;
}

// ---------------------------------------------------------------- score

int cmd_score(Context& ctx) {
  const auto& spec = ctx.spec;
  const fs::path anchor_path = spec.path("anchor");
  const bool embedding_anchor = fs::is_directory(anchor_path);
  if (embedding_anchor)
    require_file(anchor_path / kManifestFile, "embedding bundle manifest");
  else
    require_file(anchor_path, "anchor file");

  const auto& eval = spec.raw("eval");
  const bool eval_bundle = eval.is_string() && is_bundle_dir(eval.get<std::string>());
  if (!eval_bundle) check_images(spec, "eval");
  const auto kernel = kernel_of(spec);
  const auto policy = gamma_policy(spec, embedding_anchor ? std::optional<double>(kCmmdGamma) : std::nullopt);
  if (embedding_anchor && kernel != KernelKind::RBF) throw UsageError("the embedding baseline uses the RBF kernel");
  if (ctx.dry_run) {
    print_plan(ctx, {{"anchor", anchor_path.string() + (embedding_anchor ? " (embeddings)" : "")},
                     {"eval", eval_bundle ? eval.get<std::string>() + " (vector bundle)" : describe_images(spec, "eval")},
                     {"kernel", to_string(kernel)},
                     {"gamma", kernel == KernelKind::RBF ? policy.label() : "n/a"},
                     {"out", (ctx.out_dir / "scores.csv").string()}});
    return 0;
  }

  auto cache = open_cache(spec);
  std::ostringstream csv;
  csv << "# " << spec.stamp() << "\n";
  std::vector<std::string> warnings;

  if (embedding_anchor) {
    const auto anchor = read_vector_bundle(anchor_path, &warnings);
    if (anchor.kind != "embedding") throw InputError("--anchor directory must hold an embedding bundle");
    VectorSet eval_vectors;
    if (eval_bundle) {
      const auto b = read_vector_bundle(eval.get<std::string>(), &warnings);
      if (b.kind != "embedding") throw InputError("--eval bundle must hold embeddings");
      eval_vectors = b.vectors;
    } else {
      auto f = open_features(spec.has("backbone") ? spec.str("backbone") : anchor.backbone_id, cache.get(), ctx.threads);
      eval_vectors = embeddings_of(*f.extractor, anchor.layer_index, load_images(spec, "eval"), ctx.threads);
    }
    for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";
    const double gamma = embedding_gamma(anchor.vectors, policy, spec.seed());
    const auto r = mmd2_unbiased(anchor.vectors, eval_vectors, KernelSpec::rbf(gamma), ctx.threads);
    csv << "mode,backbone,layer,kernel,gamma_policy,gamma,n_anchor,n_eval,mmd2,term_anchor,term_eval,term_cross\n"
        << "embedding," << csv_field(anchor.backbone_id) << "," << anchor.layer_index << ",rbf," << policy.label() << ","
        << format_double(gamma) << "," << r.n_anchor << "," << r.n_eval << "," << format_double(r.mmd2) << ","
        << format_double(r.term_anchor) << "," << format_double(r.term_eval) << "," << format_double(r.term_cross)
        << "\n";
    write_file(ctx.out_dir / "scores.csv", csv.str());
    write_run_record(ctx);
    ctx.out << "MMD^2 = " << format_double(r.mmd2) << " (embedding baseline, gamma " << format_double(gamma) << ")\n";
    return 0;
  }

  const auto anchor = load_anchor_model(anchor_path);
  VectorSet raw;
  if (eval_bundle) {
    const auto b = read_vector_bundle(eval.get<std::string>(), &warnings);
    if (b.kind != "gram") throw InputError("--eval bundle must hold Gram vectors");
    if (b.backbone_id != anchor.backbone_id || b.layer_index != anchor.layer_index)
      throw InputError("--eval bundle is " + b.backbone_id + " layer " + std::to_string(b.layer_index) +
                       ", anchor is " + anchor.backbone_id + " layer " + std::to_string(anchor.layer_index));
    raw = b.vectors;
  } else {
    const std::string backbone = spec.has("backbone") ? spec.str("backbone") : anchor.backbone_id;
    auto f = open_features(backbone, cache.get(), ctx.threads);
    if (f.provider->backbone_id() != anchor.backbone_id)
      throw InputError("anchor was fitted on " + anchor.backbone_id + ", --backbone is " + f.provider->backbone_id());
    raw = f.provider->gram_vectors(load_images(spec, "eval"), anchor.layer_index);
    if (cache) cache->flush();
  }
  for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";
  MetricConfig cfg{anchor.backbone_id, anchor.layer_index, kernel, policy, AnchorMode::Reference};
  const auto k = resolve_kernel(cfg, anchor.gamma_med);
  const auto r = score_cell_detail(raw, anchor, k, ctx.threads);
  csv << "mode,backbone,layer,kernel,gamma_policy,gamma_med,gamma,n_anchor,n_eval,mmd2,term_anchor,term_eval,"
         "term_cross\n"
      << "gram," << csv_field(anchor.backbone_id) << "," << anchor.layer_index << "," << to_string(kernel) << ","
      << (kernel == KernelKind::RBF ? policy.label() : "") << "," << format_double(anchor.gamma_med) << ","
      << format_double(k.gamma) << "," << r.n_anchor << "," << r.n_eval << "," << format_double(r.mmd2) << ","
      << format_double(r.term_anchor) << "," << format_double(r.term_eval) << "," << format_double(r.term_cross)
      << "\n";
  write_file(ctx.out_dir / "scores.csv", csv.str());
  write_run_record(ctx);
  ctx.out << "MMD^2 = " << format_double(r.mmd2) << " (" << anchor.backbone_id << " layer " << anchor.layer_index
          << ", " << to_string(kernel);
  if (kernel == KernelKind::RBF) ctx.out << " gamma " << format_double(k.gamma);
  ctx.out << ")\n";
  return 0;
}

// ---------------------------------------------------------------- meta / grid

std::string cell_plot(const RunSpec& spec, const MetaResult& r) {
  std::vector<PlotSeries> series;
  for (const auto& t : r.per_type) {
    PlotSeries s;
    s.name = std::to_string(t.type_id) + " " + std::string(degradation_type(t.type_id).kadid_tag);
    s.x.assign(r.levels.begin(), r.levels.end());
    s.y = t.scores;
    if (s.y.size() == s.x.size()) series.push_back(std::move(s));
  }
  PlotOptions o;
  o.title = r.config.backbone_id + " layer " + std::to_string(r.config.layer_index) + ", " +
            (r.config.kernel == KernelKind::RBF ? "gamma " + r.config.gamma.label() : std::string("polynomial"));
  o.x_label = "severity level";
  o.y_label = "MMD^2";
  return stamped_svg(spec, svg_line_plot(o, series));
}

ProtocolInputs protocol_inputs(Context& ctx, AnchorMode mode) {
  ProtocolInputs in;
  in.refs = load_images(ctx.spec, "refs");
  if (mode == AnchorMode::Independent) in.anchor = load_images(ctx.spec, "anchorRefs");
  in.types = check_types(ctx.spec);
  in.levels = check_levels(ctx.spec);
  in.seed = ctx.spec.seed();
  in.threads = ctx.threads;
  in.epsilon_floor = ctx.spec.real("epsilonFloor");
  return in;
}

void check_anchor_refs(const RunSpec& spec, AnchorMode mode) {
  if (mode == AnchorMode::Independent) {
    if (!spec.has("anchorRefs")) throw UsageError("--anchor-mode independent needs --anchor-refs");
    check_images(spec, "anchorRefs");
  } else if (spec.has("anchorRefs")) {
    throw UsageError("--anchor-refs is only used with --anchor-mode independent");
  }
}

int cmd_meta(Context& ctx) {
  const auto& spec = ctx.spec;
  const auto n = check_images(spec, "refs");
  const auto backbone = check_backbone(spec.str("backbone"));
  const int layer = static_cast<int>(spec.integer("layer"));
  check_layer(backbone, layer);
  const auto kernel = kernel_of(spec);
  const auto policy = gamma_policy(spec);
  const auto mode = anchor_mode_of(spec);
  check_anchor_refs(spec, mode);
  const auto types = check_types(spec);
  const auto levels = check_levels(spec);
  if (ctx.dry_run) {
    print_plan(ctx, {{"refs", describe_images(spec, "refs") + " (" + std::to_string(n) + " images)"},
                     {"backbone", backbone.backbone_id},
                     {"layer", std::to_string(layer)},
                     {"kernel", to_string(kernel)},
                     {"gamma", kernel == KernelKind::RBF ? policy.label() : "n/a"},
                     {"anchor mode", to_string(mode)},
                     {"cells", std::to_string(types.size() * levels.size())}});
    return 0;
  }
  auto cache = open_cache(spec);
  auto f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
  const auto in = protocol_inputs(ctx, mode);
  const MetricConfig cfg{f.provider->backbone_id(), layer, kernel, policy, mode};
  const auto r = run_meta_protocol(in, cfg, *f.provider);
  if (cache) cache->flush();
  const std::vector<MetaResult> rs{r};
  write_file(ctx.out_dir / "meta_results.csv", meta_results_csv(rs, spec.stamp()));
  write_file(ctx.out_dir / "cell_scores.csv", cell_scores_csv(rs, spec.stamp()));
  write_file(ctx.out_dir / "cell_scores.svg", cell_plot(spec, r));
  write_run_record(ctx);
  for (const auto& w : r.warnings) ctx.err << "warning: " << w << "\n";
  if (r.failed) {
    ctx.err << "error: no degradation type gave a defined correlation\n";
    return 1;
  }
  ctx.out << "avg rho " << format_double(r.avg_rho) << ", avg tau " << format_double(r.avg_tau) << " over "
          << r.types_used << " types (gamma " << format_double(r.gamma) << ")\n";
  for (const auto& t : r.per_type)
    if (!t.failed)
      ctx.out << "  type " << t.type_id << " " << degradation_type(t.type_id).kadid_tag << ": rho "
              << format_double(t.rho) << ", tau " << format_double(t.tau) << "\n";
  return 0;
}

struct GridEntry {
  std::string source;  // id or sidecar path
  BackboneSpec backbone;
  std::vector<int> layers;
};

std::vector<GridEntry> check_grid_backbones(const RunSpec& spec) {
  std::vector<GridEntry> out;
  std::set<std::string> ids;
  for (const auto& e : spec.raw("backbones")) {
    GridEntry g;
    g.source = e["backbone"].get<std::string>();
    g.backbone = check_backbone(g.source);
    if (!ids.insert(g.backbone.backbone_id).second)
      throw UsageError("backbone " + g.backbone.backbone_id + " listed twice");
    if (e.contains("layers")) {
      for (const auto& l : e["layers"]) {
        check_layer(g.backbone, l.get<int>());
        g.layers.push_back(l.get<int>());
      }
    } else {
      g.layers = g.backbone.layers();
    }
    if (g.layers.empty()) throw UsageError("backbone " + g.backbone.backbone_id + " has no layers");
    out.push_back(std::move(g));
  }
  return out;
}

int cmd_grid(Context& ctx) {
  const auto& spec = ctx.spec;
  const auto n = check_images(spec, "refs");
  const auto entries = check_grid_backbones(spec);
  GridOptions opt;
  opt.kernel = kernel_of(spec);
  opt.gamma_factors = spec.reals("gammaFactors");
  for (double f : opt.gamma_factors)
    if (!(f > 0.0)) throw UsageError("--gamma-factors must be positive");
  if (opt.gamma_factors.empty()) throw UsageError("--gamma-factors is empty");
  opt.anchor_mode = anchor_mode_of(spec);
  check_anchor_refs(spec, opt.anchor_mode);
  const auto types = check_types(spec);
  const auto levels = check_levels(spec);
  const auto top_k = spec.integer("topK");
  if (top_k < 0) throw UsageError("--top-k must be non-negative");

  std::size_t layer_total = 0;
  for (const auto& e : entries) layer_total += e.layers.size();
  const std::size_t configs = layer_total * (opt.kernel == KernelKind::RBF ? opt.gamma_factors.size() : 1);
  if (ctx.dry_run) {
    std::vector<std::pair<std::string, std::string>> plan{
        {"refs", describe_images(spec, "refs") + " (" + std::to_string(n) + " images)"}};
    for (const auto& e : entries)
      plan.emplace_back("backbone " + e.backbone.backbone_id, std::to_string(e.layers.size()) + " layers");
    plan.emplace_back("kernel", to_string(opt.kernel));
    if (opt.kernel == KernelKind::RBF) plan.emplace_back("gamma factors", join(opt.gamma_factors));
    plan.emplace_back("anchor mode", to_string(opt.anchor_mode));
    plan.emplace_back("cells", std::to_string(types.size() * levels.size()));
    plan.emplace_back("configurations", std::to_string(configs));
    print_plan(ctx, plan);
    return 0;
  }

  auto cache = open_cache(spec);
  std::vector<Features> features;
  std::vector<GridSource> sources;
  for (const auto& e : entries) features.push_back(open_features(e.source, cache.get(), ctx.threads));
  for (std::size_t i = 0; i < entries.size(); ++i) sources.push_back({features[i].provider.get(), entries[i].layers});
  const auto in = protocol_inputs(ctx, opt.anchor_mode);
  const auto ranked = grid_search(sources, opt, in);
  if (cache) cache->flush();

  write_file(ctx.out_dir / "meta_results.csv", meta_results_csv(ranked, spec.stamp()));
  write_file(ctx.out_dir / "cell_scores.csv", cell_scores_csv(ranked, spec.stamp()));
  const auto table = top_k_table(ranked, static_cast<std::size_t>(top_k));
  write_file(ctx.out_dir / "top_k.txt", "# " + spec.stamp() + "\n" + table);
  if (!ranked.empty() && !ranked.front().failed)
    write_file(ctx.out_dir / "best_cell_scores.svg", cell_plot(spec, ranked.front()));
  write_run_record(ctx);
  std::size_t failed = 0;
  for (const auto& r : ranked) failed += r.failed;
  ctx.out << ranked.size() << " configurations";
  if (failed) ctx.out << " (" << failed << " failed)";
  ctx.out << "\n" << table;
  return failed == ranked.size() ? 1 : 0;
}

// ---------------------------------------------------------------- kadid / raise

int cmd_groups(Context& ctx, OrderingKey key) {
  const auto& spec = ctx.spec;
  require_file(spec.path("manifest"), "opinion manifest");
  require_dir(spec.path("images"), "--images");
  const auto group_size = spec.integer("groupSize");
  if (group_size < 1) throw UsageError("--group-size must be positive");
  const auto permutations = spec.integer("permutations");
  if (permutations < 0) throw UsageError("--permutations must be non-negative");
  const std::string baseline = spec.str("baseline");
  if (baseline != "gmmd" && baseline != "cmmd") throw UsageError("--baseline must be gmmd or cmmd");
  const bool cmmd = baseline == "cmmd";

  const bool have_anchor_file = spec.has("anchor");
  if (have_anchor_file == spec.has("anchorRefs")) throw UsageError("give exactly one of --anchor and --anchor-refs");
  if (cmmd && have_anchor_file && !is_bundle_dir(spec.path("anchor")))
    throw UsageError("--baseline cmmd needs --anchor-refs or an embedding bundle as --anchor");
  if (have_anchor_file && !cmmd) require_file(spec.path("anchor"), "anchor file");
  if (!have_anchor_file) check_images(spec, "anchorRefs");
  if (spec.has("backbone")) check_backbone(spec.str("backbone"));
  if (!have_anchor_file && !spec.has("backbone")) throw UsageError("--anchor-refs needs --backbone");
  const auto kernel = kernel_of(spec);
  if (cmmd && kernel != KernelKind::RBF) throw UsageError("the embedding baseline uses the RBF kernel");
  const auto policy = gamma_policy(spec, cmmd ? std::optional<double>(kCmmdGamma) : std::nullopt);

  const auto entries = read_opinion_csv(spec.path("manifest"), key);
  GroupedDataset groups;
  try {
    groups = build_ranked_groups(entries, static_cast<std::size_t>(group_size), key, spec.flag("invertOrder"));
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  const std::string order = std::string(spec.flag("invertOrder") ? "descending" : "ascending") + " " +
                            to_string(key) + ", group 0 = " + (spec.flag("invertOrder") ? "highest " : "lowest ") +
                            to_string(key);
  if (ctx.dry_run) {
    print_plan(ctx, {{"manifest", spec.path("manifest").string() + " (" + std::to_string(entries.size()) + " entries)"},
                     {"groups", std::to_string(groups.groups.size()) + " of " + std::to_string(group_size)},
                     {"ordering", order},
                     {"scorer", cmmd ? "embedding MMD (" + policy.label() + ")" : "gmmd (" + policy.label() + ")"}});
    return 0;
  }

  auto cache = open_cache(spec);
  const DirectoryImages images(spec.path("images"));
  std::optional<Features> f;
  std::optional<AnchorModel> anchor;
  GroupScorer scorer;
  if (cmmd) {
    const int layer = static_cast<int>(spec.has("embeddingLayer") ? spec.integer("embeddingLayer") : spec.integer("layer"));
    f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
    VectorSet anchor_embeddings;
    if (have_anchor_file) {
      std::vector<std::string> warnings;
      auto b = read_vector_bundle(spec.path("anchor"), &warnings);
      for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";
      if (b.kind != "embedding") throw InputError("--anchor bundle must hold embeddings");
      anchor_embeddings = std::move(b.vectors);
    } else {
      anchor_embeddings = embeddings_of(*f->extractor, layer, load_images(spec, "anchorRefs"), ctx.threads);
    }
    const double gamma = embedding_gamma(anchor_embeddings, policy, spec.seed());
    scorer = embedding_scorer(*f->extractor, layer, std::move(anchor_embeddings), gamma, ctx.threads);
  } else {
    if (have_anchor_file) {
      anchor = load_anchor_model(spec.path("anchor"));
      f = open_features(spec.has("backbone") ? spec.str("backbone") : anchor->backbone_id, cache.get(), ctx.threads);
    } else {
      f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
      anchor = build_anchor_model(*f->provider, static_cast<int>(spec.integer("layer")), load_images(spec, "anchorRefs"),
                                  spec.seed(), spec.real("epsilonFloor"));
    }
    MetricConfig cfg{anchor->backbone_id, anchor->layer_index, kernel, policy, AnchorMode::Independent};
    scorer = gram_scorer(*f->provider, *anchor, resolve_kernel(cfg, anchor->gamma_med));
  }

  GroupExperimentOptions opt;
  opt.axis = key == OrderingKey::DMOS ? CorrelationAxis::Rank : CorrelationAxis::MeanScore;
  opt.permutations = static_cast<std::size_t>(permutations);
  opt.seed = spec.seed();
  opt.threads = ctx.threads;
  const auto r = run_group_experiment(groups, images, scorer, opt);
  if (cache) cache->flush();

  write_file(ctx.out_dir / "groups.csv", groups_csv(groups, spec.stamp()));
  write_file(ctx.out_dir / "scores.csv", group_scores_csv(groups, r, spec.stamp()));
  auto summary = group_summary_json(groups, r);
  summary["toolkitVersion"] = kVersion;
  summary["specHash"] = spec.hash();
  if (anchor) summary["anchor"] = {{"backbone", anchor->backbone_id}, {"layer", anchor->layer_index},
                                   {"gammaMed", anchor->gamma_med}};
  write_file(ctx.out_dir / "summary.json", summary.dump(2) + "\n");

  PlotOptions o;
  o.title = std::string(key == OrderingKey::DMOS ? "Score by DMOS group" : "Score by mean MOS") + " (" + r.scorer + ")";
  o.x_label = opt.axis == CorrelationAxis::Rank ? "group rank (" + order + ")" : "group mean " + to_string(key);
  o.y_label = "MMD^2";
  const double x0 = *std::min_element(r.x.begin(), r.x.end());
  const double x1 = *std::max_element(r.x.begin(), r.x.end());
  const std::vector<PlotSeries> series{
      {"groups", r.x, r.scores, true, false},
      {"least squares", {x0, x1}, {r.fit.intercept + r.fit.slope * x0, r.fit.intercept + r.fit.slope * x1}, false, true}};
  write_file(ctx.out_dir / "scores.svg", stamped_svg(spec, svg_line_plot(o, series)));
  write_run_record(ctx);

  ctx.out << groups.groups.size() << " groups (" << order << ")\n"
          << "rho " << format_double(r.rho) << ", tau " << format_double(r.tau) << ", slope "
          << format_double(r.fit.slope) << ", permutation p " << format_double(r.p_value) << "\n";
  return 0;
}

// ---------------------------------------------------------------- inversion

int cmd_inversion(Context& ctx) {
  const auto& spec = ctx.spec;
  // inversion.json supplies image sets not given directly.
  json sets = json::object();
  for (const char* k : {"anchorRefs", "real", "synthetic"})
    if (spec.has(k)) sets[k] = spec.raw(k);
  if (spec.has("manifest")) {
    const auto mpath = spec.path("manifest");
    require_file(mpath, "inversion manifest");
    json m;
    try {
      std::ifstream in(mpath);
      in >> m;
    } catch (const json::exception& e) {
      throw UsageError("inversion manifest is not valid JSON: " + std::string(e.what()));
    }
    const auto base = fs::absolute(mpath).parent_path();
    auto rel = [&](const json& v, const std::string& what) {
      if (!v.is_string()) throw UsageError("inversion manifest: " + what + " must be a path");
      const fs::path p = v.get<std::string>();
      return (p.is_absolute() ? p : base / p).lexically_normal().string();
    };
    if (!m.is_object() || !m.contains("anchorDir") || !m.contains("evalDirs") || !m["evalDirs"].is_object())
      throw UsageError("inversion manifest needs anchorDir and evalDirs {real, synthetic}");
    if (!sets.contains("anchorRefs")) sets["anchorRefs"] = rel(m["anchorDir"], "anchorDir");
    for (const char* k : {"real", "synthetic"})
      if (!sets.contains(k)) {
        if (!m["evalDirs"].contains(k)) throw UsageError(std::string("inversion manifest: evalDirs.") + k + " missing");
        sets[k] = rel(m["evalDirs"][k], std::string("evalDirs.") + k);
      }
  }
  const bool have_anchor_file = spec.has("anchor");
  for (const char* k : {"real", "synthetic"})
    if (!sets.contains(k)) throw UsageError(std::string("missing ") + flag_name(k));
  if (!have_anchor_file && !sets.contains("anchorRefs")) throw UsageError("missing --anchor or --anchor-refs");

  json resolved = spec.values();
  for (const auto& [k, v] : sets.items()) resolved[k] = v;
  const RunSpec view(spec.command(), resolved, {});
  std::size_t counts[3] = {0, check_images(view, "real"), check_images(view, "synthetic")};
  if (!have_anchor_file) counts[0] = check_images(view, "anchorRefs");
  if (have_anchor_file) require_file(spec.path("anchor"), "anchor file");
  const std::string baseline = spec.str("baseline");
  if (baseline != "gmmd" && baseline != "cmmd") throw UsageError("--baseline must be gmmd or cmmd");
  const bool cmmd = baseline == "cmmd";
  if (cmmd && have_anchor_file) throw UsageError("--baseline cmmd needs --anchor-refs");
  if (spec.has("backbone")) check_backbone(spec.str("backbone"));
  const auto factors = spec.reals("gammaFactors");
  for (double f : factors)
    if (!(f > 0.0)) throw UsageError("--gamma-factors must be positive");

  if (ctx.dry_run) {
    print_plan(ctx, {{"anchor", have_anchor_file ? spec.path("anchor").string()
                                                 : describe_images(view, "anchorRefs") + " (" +
                                                       std::to_string(counts[0]) + " images)"},
                     {"real", describe_images(view, "real") + " (" + std::to_string(counts[1]) + " images)"},
                     {"synthetic", describe_images(view, "synthetic") + " (" + std::to_string(counts[2]) + " images)"},
                     {"scorer", cmmd ? "embedding MMD" : "gmmd"},
                     {"gamma factors", cmmd && !spec.has("gammaFactor") ? "absolute" : join(factors)}});
    return 0;
  }

  auto cache = open_cache(spec);
  std::vector<InversionSweepRow> rows;
  std::string scorer_label;
  if (cmmd) {
    auto f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
    const int layer = static_cast<int>(spec.has("embeddingLayer") ? spec.integer("embeddingLayer") : spec.integer("layer"));
    const auto a = embeddings_of(*f.extractor, layer, load_images(view, "anchorRefs"), ctx.threads);
    const auto s = embeddings_of(*f.extractor, layer, load_images(view, "synthetic"), ctx.threads);
    const auto r = embeddings_of(*f.extractor, layer, load_images(view, "real"), ctx.threads);
    const auto policy = gamma_policy(spec, kCmmdGamma);
    const double gamma = embedding_gamma(a, policy, spec.seed());
    const double factor = policy.kind == GammaPolicy::Kind::MedianMultiple ? policy.value : std::nan("");
    rows.push_back({factor, gamma,
                    make_inversion_result(embedding_mmd_baseline(a, s, gamma, ctx.threads),
                                          embedding_mmd_baseline(a, r, gamma, ctx.threads))});
    scorer_label = "embedding MMD, " + f.provider->backbone_id() + " layer " + std::to_string(layer);
  } else {
    std::optional<Features> f;
    AnchorModel anchor;
    if (have_anchor_file) {
      anchor = load_anchor_model(spec.path("anchor"));
      f = open_features(spec.has("backbone") ? spec.str("backbone") : anchor.backbone_id, cache.get(), ctx.threads);
    } else {
      f = open_features(spec.str("backbone"), cache.get(), ctx.threads);
      anchor = build_anchor_model(*f->provider, static_cast<int>(spec.integer("layer")),
                                  load_images(view, "anchorRefs"), spec.seed(), spec.real("epsilonFloor"));
    }
    const auto syn = f->provider->gram_vectors(load_images(view, "synthetic"), anchor.layer_index);
    const auto real = f->provider->gram_vectors(load_images(view, "real"), anchor.layer_index);
    rows = inversion_sweep(anchor, syn, real, factors, ctx.threads);
    scorer_label = "gmmd, " + anchor.backbone_id + " layer " + std::to_string(anchor.layer_index);
  }
  if (cache) cache->flush();

  write_file(ctx.out_dir / "inversion.csv", inversion_csv(rows, spec.stamp()));
  json summary{{"toolkitVersion", kVersion}, {"specHash", spec.hash()}, {"scorer", scorer_label}};
  json jrows = json::array();
  bool any_inverted = false;
  std::vector<std::string> cats;
  PlotSeries s_syn{"synthetic", {}, {}}, s_real{"real", {}, {}};
  for (const auto& r : rows) {
    any_inverted |= r.result.inverted;
    jrows.push_back({{"gammaFactor", std::isnan(r.factor) ? json(nullptr) : json(r.factor)},
                     {"gamma", r.gamma},
                     {"scoreSynthetic", r.result.score_synthetic},
                     {"scoreReal", r.result.score_real},
                     {"ratio", std::isinf(r.result.ratio) ? json("inf") : json(r.result.ratio)},
                     {"inverted", r.result.inverted}});
    cats.push_back(std::isnan(r.factor) ? "gamma " + format_double(r.gamma) : format_double(r.factor) + "x");
    s_syn.y.push_back(clamp_at_zero(r.result.score_synthetic));
    s_real.y.push_back(clamp_at_zero(r.result.score_real));
  }
  summary["rows"] = jrows;
  summary["invertedAny"] = any_inverted;
  write_file(ctx.out_dir / "summary.json", summary.dump(2) + "\n");
  PlotOptions o;
  o.title = "Synthetic vs real (" + scorer_label + ")";
  o.x_label = "bandwidth";
  o.y_label = "MMD^2 (clipped at 0)";
  o.log_y = true;
  write_file(ctx.out_dir / "inversion.svg", stamped_svg(spec, svg_bar_plot(o, cats, {s_syn, s_real})));
  write_run_record(ctx);

  ctx.out << scorer_label << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i)
    ctx.out << "  " << cats[i] << ": synthetic " << format_double(rows[i].result.score_synthetic) << ", real "
            << format_double(rows[i].result.score_real) << ", ratio "
            << (std::isinf(rows[i].result.ratio) ? std::string("inf") : format_double(rows[i].result.ratio))
            << (rows[i].result.inverted ? "  INVERTED" : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError("column '" + name + "' missing");
    return static_cast<std::size_t>(it - header.begin());
  }
};

double cell_number(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s.empty()) return std::nan("");
  return std::stod(s);
}

int cmd_report(Context& ctx) {
  const auto& spec = ctx.spec;
  const auto input = spec.path("input");
  require_file(input, "--input");
  std::ifstream in(input);
  CsvTable t;
  auto rows = read_csv_rows(in);
  if (rows.empty()) throw UsageError("--input is empty");
  t.header = rows.front();
  t.rows.assign(rows.begin() + 1, rows.end());
  const auto top_k = static_cast<std::size_t>(std::max<std::int64_t>(spec.integer("topK"), 1));
  const std::string first = t.header.front();
  std::string kind;
  if (first == "rank") kind = "meta results";
  else if (first == "backbone" && t.header.size() > 5 && t.header[5] == "type_id") kind = "cell scores";
  else if (first == "gamma_factor") kind = "inversion";
  else if (first == "group" && t.header.size() == 4) kind = "group scores";
  else throw UsageError("--input: unrecognised results file (header starts with '" + first + "')");
  if (ctx.dry_run) {
    print_plan(ctx, {{"input", input.string() + " (" + kind + ", " + std::to_string(t.rows.size()) + " rows)"},
                     {"out", ctx.out_dir.string()}});
    return 0;
  }

  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file(ctx.out_dir / name, content);
    written.push_back(name);
  };
  PlotOptions o;
  if (kind == "meta results") {
    const auto c_rank = t.col("rank"), c_bb = t.col("backbone"), c_layer = t.col("layer"),
               c_gv = t.col("gamma_value"), c_rho = t.col("avg_rho"), c_tau = t.col("avg_tau");
    std::ostringstream table;
    char line[160];
    std::snprintf(line, sizeof line, "%4s  %-16s %5s %9s %8s %8s\n", "rank", "backbone", "layer", "gamma", "rho", "tau");
    table << line;
    std::vector<std::string> cats;
    PlotSeries rho{"avg rho", {}, {}}, tau{"avg tau", {}, {}};
    for (const auto& r : t.rows) {
      if (r.at(c_rank).empty() || cats.size() >= top_k) continue;
      std::snprintf(line, sizeof line, "%4s  %-16s %5s %9s %8.4f %8.4f\n", r[c_rank].c_str(), r[c_bb].c_str(),
                    r[c_layer].c_str(), (r[c_gv].empty() ? "-" : r[c_gv] + "x").c_str(), cell_number(r[c_rho]),
                    cell_number(r[c_tau]));
      table << line;
      cats.push_back(r[c_bb] + " L" + r[c_layer] + (r[c_gv].empty() ? "" : " " + r[c_gv] + "x"));
      rho.y.push_back(cell_number(r[c_rho]));
      tau.y.push_back(cell_number(r[c_tau]));
    }
    emit("top_k.txt", "# " + spec.stamp() + "\n" + table.str());
    o.title = "Top configurations";
    o.x_label = "configuration";
    o.y_label = "correlation with severity";
    o.width = std::max(640, 90 * static_cast<int>(cats.size()) + 220);
    emit("top_k.svg", stamped_svg(spec, svg_bar_plot(o, cats, {rho, tau})));
    ctx.out << table.str();
  } else if (kind == "cell scores") {
    const auto c_bb = t.col("backbone"), c_layer = t.col("layer"), c_gv = t.col("gamma_value"),
               c_type = t.col("type_id"), c_tag = t.col("kadid_tag"), c_level = t.col("level"), c_score = t.col("score");
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, PlotSeries>> configs;
    for (const auto& r : t.rows) {
      const std::string cfg = r[c_bb] + "_L" + r[c_layer] + (r[c_gv].empty() ? "_poly" : "_g" + r[c_gv]);
      if (!configs.contains(cfg)) {
        if (order.size() >= top_k) continue;
        order.push_back(cfg);
      }
      auto& s = configs[cfg][r[c_type]];
      s.name = r[c_type] + " " + r[c_tag];
      s.x.push_back(cell_number(r[c_level]));
      s.y.push_back(cell_number(r[c_score]));
    }
    for (const auto& cfg : order) {
      std::vector<PlotSeries> series;
      for (auto& [type, s] : configs[cfg]) series.push_back(s);
      std::sort(series.begin(), series.end(), [](const PlotSeries& a, const PlotSeries& b) {
        return std::stoi(a.name) < std::stoi(b.name);
      });
      o.title = cfg;
      o.x_label = "severity level";
      o.y_label = "MMD^2";
      std::string file = "cells_" + cfg + ".svg";
      std::replace(file.begin(), file.end(), '/', '_');
      emit(file, stamped_svg(spec, svg_line_plot(o, series)));
    }
  } else if (kind == "inversion") {
    const auto c_f = t.col("gamma_factor"), c_g = t.col("gamma"), c_s = t.col("score_synthetic"),
               c_r = t.col("score_real");
    std::vector<std::string> cats;
    PlotSeries syn{"synthetic", {}, {}}, real{"real", {}, {}};
    for (const auto& r : t.rows) {
      cats.push_back(r[c_f].empty() ? "gamma " + r[c_g] : r[c_f] + "x");
      syn.y.push_back(clamp_at_zero(cell_number(r[c_s])));
      real.y.push_back(clamp_at_zero(cell_number(r[c_r])));
    }
    o.title = "Synthetic vs real";
    o.x_label = "bandwidth";
    o.y_label = "MMD^2 (clipped at 0)";
    o.log_y = true;
    emit("inversion.svg", stamped_svg(spec, svg_bar_plot(o, cats, {syn, real})));
  } else {
    PlotSeries s{"groups", {}, {}, true, false};
    for (const auto& r : t.rows) {
      s.x.push_back(cell_number(r.at(0)));
      s.y.push_back(cell_number(r.at(3)));
    }
    o.title = "Score by group";
    o.x_label = "group";
    o.y_label = "MMD^2";
    emit("scores.svg", stamped_svg(spec, svg_line_plot(o, {s})));
  }
  write_run_record(ctx);
  for (const auto& w : written) ctx.out << "wrote " << (ctx.out_dir / w).string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- table

OptionDef opt(std::string key, Kind kind, std::string help, json fallback = nullptr) {
  return {std::move(key), kind, std::move(help), std::move(fallback), true};
}

std::vector<Command> commands() {
  const auto refs = opt("refs", Kind::Images, "reference images: a directory or synthetic:COUNT:SIZE[:SEED]");
  const auto backbone = opt("backbone", Kind::String, "pixel-patch or a backbone sidecar JSON", kPixelPatchId);
  const auto backbone_opt = opt("backbone", Kind::String, "pixel-patch or a backbone sidecar JSON");
  const auto layer = opt("layer", Kind::Int, "layer index", 1);
  const auto kernel = opt("kernel", Kind::String, "rbf or polynomial", "rbf");
  const auto gamma_factor = opt("gammaFactor", Kind::Double, "RBF bandwidth as a multiple of gamma_med");
  const auto gamma = opt("gamma", Kind::Double, "absolute RBF bandwidth");
  const auto anchor_mode = opt("anchorMode", Kind::String, "reference or independent", "reference");
  const auto anchor_refs = opt("anchorRefs", Kind::Images, "anchor images (independent mode)");
  const auto types = opt("types", Kind::IntList, "degradation type ids (default all 20)");
  const auto levels = opt("levels", Kind::IntList, "severity levels (default 1..10)");
  const auto eps = opt("epsilonFloor", Kind::Double, "standard deviation floor", kDefaultEpsilonFloor);
  const auto embedding_layer = opt("embeddingLayer", Kind::Int, "layer whose flattened output is the embedding");
  const auto baseline = opt("baseline", Kind::String, "gmmd, or cmmd for the embedding baseline", "gmmd");
  const auto permutations = opt("permutations", Kind::Int, "permutations for the p-value", 10'000);
  json paper_factors = kPaperGammaFactors;

  auto group_opts = [&](int group_size) {
    return std::vector<OptionDef>{opt("manifest", Kind::Path, "opinion score CSV"),
                                  opt("images", Kind::Path, "image directory"),
                                  opt("anchor", Kind::Path, "anchor.gmmd (or an embedding bundle for cmmd)"),
                                  anchor_refs,
                                  backbone_opt,
                                  layer,
                                  kernel,
                                  gamma_factor,
                                  gamma,
                                  opt("groupSize", Kind::Int, "images per group", group_size),
                                  opt("invertOrder", Kind::Bool, "rank groups by descending opinion score"),
                                  baseline,
                                  embedding_layer,
                                  permutations,
                                  eps};
  };

  return {
      {"degrade", "write degraded copies of reference images",
       {refs, types, opt("levels", Kind::IntList, "severity levels (default 1..10)")}, cmd_degrade},
      {"anchor", "fit an anchor model (standardizer and gamma_med)",
       {refs, opt("vectors", Kind::Path, "precomputed Gram vector bundle instead of images"), backbone, layer,
        opt("maxExactPairs", Kind::Int, "pair budget of the median heuristic",
            static_cast<std::int64_t>(kDefaultMaxExactPairs)),
        eps},
       cmd_anchor},
      {"features", "write Gram vectors or embeddings as NPY bundles",
       {opt("images", Kind::Images, "images to embed"), backbone, opt("layers", Kind::IntList, "layers (default all)"),
        opt("embedding", Kind::Bool, "flattened layer outputs instead of Gram vectors")},
       cmd_features},
      {"score", "MMD^2 of an evaluation set against an anchor",
       {opt("anchor", Kind::Path, "anchor.gmmd, or an embedding bundle directory"),
        opt("eval", Kind::Images, "evaluation images or a vector bundle directory"), backbone_opt, kernel, gamma_factor,
        gamma},
       cmd_score},
      {"meta", "meta-metric protocol for one configuration",
       {refs, backbone, layer, kernel, gamma_factor, gamma, anchor_mode, anchor_refs, types, levels, eps}, cmd_meta},
      {"grid", "meta-metric grid search over backbones, layers and bandwidths",
       {refs, opt("backbones", Kind::Backbones, "backbone ids or sidecars", json::array({{{"backbone", kPixelPatchId}}})),
        opt("gammaFactors", Kind::DoubleList, "bandwidth multiples", paper_factors), kernel, anchor_mode, anchor_refs,
        types, levels, opt("topK", Kind::Int, "rows of the printed table", 10), eps},
       cmd_grid},
      {"kadid", "DMOS-ranked group experiment", group_opts(81),
       [](Context& c) { return cmd_groups(c, OrderingKey::DMOS); }},
      {"raise", "MOS group experiment with regression", group_opts(20),
       [](Context& c) { return cmd_groups(c, OrderingKey::MOS); }},
      {"inversion", "real versus synthetic evaluation sets",
       {opt("manifest", Kind::Path, "inversion.json with anchorDir and evalDirs"),
        opt("anchor", Kind::Path, "anchor.gmmd"), anchor_refs, opt("real", Kind::Images, "real evaluation images"),
        opt("synthetic", Kind::Images, "synthetic evaluation images"), backbone, layer,
        opt("gammaFactors", Kind::DoubleList, "bandwidth multiples", json::array({0.1, 0.5, 1.0, 2.0, 10.0})), baseline,
        embedding_layer, gamma_factor, gamma, eps},
       cmd_inversion},
      {"report", "tables and plots from a results CSV",
       {opt("input", Kind::Path, "meta_results.csv, cell_scores.csv, inversion.csv or scores.csv"),
        opt("topK", Kind::Int, "configurations to include", 10)},
       cmd_report},
  };
}

std::vector<OptionDef> common_options() {
  return {
      {"spec", Kind::Path, "JSON run-spec; flags override its fields", nullptr, false},
      {"out", Kind::Path, "output directory", "out", false},
      {"threads", Kind::Int, "worker threads", 1, false},
      {"seed", Kind::Int, "base seed of all randomness", 0, true},
      {"cacheDir", Kind::Path, "Gram vector cache (default $GMMD_CACHE_DIR)", nullptr, false},
      {"noCache", Kind::Bool, "do not read or write the cache", nullptr, false},
      {"dryRun", Kind::Bool, "validate inputs and print the plan", nullptr, false},
  };
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const InputError*>(&e)) return "input";
  if (dynamic_cast<const FitError*>(&e)) return "fit";
  if (dynamic_cast<const DegenerateBandwidthError*>(&e)) return "degenerate-bandwidth";
  if (dynamic_cast<const SampleSizeError*>(&e)) return "sample-size";
  if (dynamic_cast<const UndefinedCorrelationError*>(&e)) return "undefined-correlation";
  if (dynamic_cast<const InferenceError*>(&e)) return "inference";
  if (dynamic_cast<const CorruptionError*>(&e)) return "corruption";
  return "internal";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gram-MMD realism metric toolkit", "gmmd"};
  app.set_version_flag("--version", std::string("gmmd ") + kVersion);
  app.require_subcommand(1);

  const auto cmds = commands();
  const auto common = common_options();
  struct Bound {
    const Command* cmd;
    CLI::App* sub;
    std::vector<OptionDef> defs;
    std::map<std::string, std::string> text;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> handles;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& c : cmds) {
    auto b = std::make_unique<Bound>();
    b->cmd = &c;
    b->sub = app.add_subcommand(c.name, c.help);
    b->defs = c.options;
    b->defs.insert(b->defs.end(), common.begin(), common.end());
    for (const auto& d : b->defs) {
      if (d.kind == Kind::Bool)
        b->handles[d.key] = b->sub->add_flag(flag_name(d.key), b->flags[d.key], d.help);
      else
        b->handles[d.key] = b->sub->add_option(flag_name(d.key), b->text[d.key], d.help);
    }
    bound.push_back(std::move(b));
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  for (auto& b : bound) {
    if (!b->sub->parsed()) continue;
    try {
      json values = json::object();
      if (b->handles["spec"]->count() > 0) values = load_spec_file(b->text["spec"], b->defs);
      for (const auto& d : b->defs) {
        if (d.key == "spec" || b->handles[d.key]->count() == 0) continue;
        values[d.key] = d.kind == Kind::Bool ? json(b->flags[d.key]) : parse_flag_value(d, b->text[d.key]);
      }
      const RunSpec spec(b->cmd->name, values, b->defs);
      const auto threads = spec.integer("threads");
      if (threads < 1 || threads > 1024) throw UsageError("--threads must be between 1 and 1024");
      spec.seed();
      Context ctx{spec, out, err, spec.flag("dryRun"), static_cast<unsigned>(threads), spec.path("out")};
      if (!ctx.dry_run) fs::create_directories(ctx.out_dir);
      return b->cmd->run(ctx);
    } catch (const std::exception& e) {
      const bool usage = dynamic_cast<const UsageError*>(&e) != nullptr;
      err << "error: " << error_kind(e) << ": " << e.what() << "\n";
      return usage ? 2 : 1;
    }
  }
  return 2;
}

}  // namespace gmmd::cli

#include "gmmd/gram_cache.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"
#include "gmmd/npy.hpp"

namespace gmmd {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "gmmd-vectors";

std::string row_hash(const double* row, std::size_t dim) {
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(row), dim * sizeof(double)});
}

void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string layer_dir_name(int layer) { return std::to_string(layer); }

}  // namespace

std::size_t source_dim_for(std::size_t m) {
  const auto d = static_cast<std::size_t>(std::llround((std::sqrt(8.0 * static_cast<double>(m) + 1.0) - 1.0) / 2.0));
  if (upper_tri_size(d) != m) throw InputError(std::to_string(m) + " is not the size of an upper triangle");
  return d;
}

void write_vector_bundle(const std::filesystem::path& dir, const VectorBundle& b) {
  if (b.records.size() != b.vectors.size()) throw InputError("vector bundle has mismatched record and row counts");
  json rows = json::array();
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    json r{{"id", b.records[i].id}, {"sha256", row_hash(b.vectors.row(i).data(), b.vectors.dim())}};
    if (!b.records[i].preprocessing_hash.empty()) r["preprocessingHash"] = b.records[i].preprocessing_hash;
    if (!b.records[i].image_digest.empty()) r["imageDigest"] = b.records[i].image_digest;
    rows.push_back(std::move(r));
  }
  json manifest{{"format", kFormat},
                {"version", 1},
                {"kind", b.kind},
                {"backboneId", b.backbone_id},
                {"layerIndex", b.layer_index},
                {"dim", b.vectors.dim()},
                {"dtype", "<f8"},
                {"rows", rows}};
  if (b.kind == "gram") manifest["sourceDim"] = b.source_dim;

  std::ostringstream npy;
  const std::size_t shape[] = {b.vectors.size(), b.vectors.dim()};
  write_npy(npy, shape, b.vectors.data());
  write_atomically(dir / kVectorsFile, npy.str());
  write_atomically(dir / kManifestFile, manifest.dump(2) + "\n");
}

VectorBundle read_vector_bundle(const std::filesystem::path& dir, std::vector<std::string>* warnings) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw InputError("missing " + (dir / kManifestFile).string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError((dir / kManifestFile).string() + " is not valid JSON: " + e.what());
  }
  static const std::set<std::string> known{"format", "version", "kind",  "backboneId", "layerIndex",
                                           "dim",    "dtype",   "rows",  "sourceDim",  "toolkitVersion",
                                           "specHash"};
  if (warnings) {
    for (const auto& [k, v] : m.items()) {
      if (!known.count(k)) warnings->push_back("manifest key '" + k + "' is not recognised");
    }
  }
  VectorBundle b;
  const NpyArray arr = read_npy(dir / kVectorsFile);
  try {
    if (m.at("format").get<std::string>() != kFormat) throw InputError("manifest format is not " + std::string(kFormat));
    if (m.at("version").get<int>() != 1) throw InputError("unsupported manifest version");
    b.kind = m.value("kind", std::string("gram"));
    b.backbone_id = m.at("backboneId").get<std::string>();
    b.layer_index = m.at("layerIndex").get<int>();
    const auto dim = m.at("dim").get<std::size_t>();
    if (arr.shape.size() != 2 || arr.shape[1] != dim) throw InputError("vectors.npy shape does not match manifest dim");
    if (m.contains("dtype") && m.at("dtype").get<std::string>() != arr.descr) {
      throw InputError("vectors.npy dtype does not match manifest dtype");
    }
    if (b.kind == "gram") {
      b.source_dim = m.at("sourceDim").get<std::size_t>();
      if (upper_tri_size(b.source_dim) != dim) throw InputError("manifest sourceDim does not match dim");
    } else if (b.kind != "embedding") {
      throw InputError("manifest kind must be gram or embedding");
    }
    const auto& rows = m.at("rows");
    if (rows.size() != arr.shape[0]) throw InputError("manifest row count does not match vectors.npy");
    const std::size_t stride = arr.row_bytes();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      VectorRecord rec{r.at("id").get<std::string>(), r.value("preprocessingHash", std::string()),
                       r.value("imageDigest", std::string())};
      const std::string want = r.at("sha256").get<std::string>();
      const std::string got = sha256_hex({reinterpret_cast<const std::uint8_t*>(arr.raw.data() + i * stride), stride});
      if (want != got) {
        throw CorruptionError((dir / kVectorsFile).string() + ": row " + std::to_string(i) + " ('" + rec.id +
                              "') does not match its manifest hash");
      }
      b.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw InputError((dir / kManifestFile).string() + ": " + e.what());
  }
  b.vectors = VectorSet(arr.shape[0], arr.shape[1], arr.data);
  return b;
}

// ---------------------------------------------------------------------------

struct GramCache::Shard {
  std::shared_mutex mutex;
  bool loaded = false;
  bool dirty = false;
  std::size_t dim = 0;
  std::string backbone_id;
  int layer = 0;
  std::vector<VectorRecord> records;
  std::vector<std::vector<double>> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
};

GramCache::GramCache(std::filesystem::path root) : root_(std::move(root)) {}
GramCache::~GramCache() = default;

std::filesystem::path GramCache::default_root() {
  if (const char* env = std::getenv("GMMD_CACHE_DIR"); env && *env) return env;
  return "cache";
}

std::filesystem::path GramCache::shard_dir(const std::string& backbone_id, int layer) const {
  return root_ / backbone_id / layer_dir_name(layer);
}

GramCache::Shard& GramCache::shard(const std::string& backbone_id, int layer) {
  std::lock_guard lock(shards_mutex_);
  auto& slot = shards_[{backbone_id, layer}];
  if (!slot) {
    slot = std::make_unique<Shard>();
    slot->backbone_id = backbone_id;
    slot->layer = layer;
  }
  if (!slot->loaded) {
    const auto dir = shard_dir(backbone_id, layer);
    if (std::filesystem::exists(dir / kManifestFile)) {
      VectorBundle b = read_vector_bundle(dir);
      slot->dim = b.vectors.dim();
      for (std::size_t i = 0; i < b.records.size(); ++i) {
        const auto row = b.vectors.row(i);
        slot->index[{b.records[i].id, b.records[i].preprocessing_hash}] = slot->rows.size();
        slot->rows.emplace_back(row.begin(), row.end());
        slot->records.push_back(std::move(b.records[i]));
      }
    }
    slot->loaded = true;
  }
  return *slot;
}

std::optional<GramVector> GramCache::get(const CacheKey& key) {
  Shard& s = shard(key.backbone_id, key.layer_index);
  std::shared_lock lock(s.mutex);
  const auto it = s.index.find({key.image_id, key.preprocessing_hash});
  if (it == s.index.end()) return std::nullopt;
  const auto& rec = s.records[it->second];
  if (!key.image_digest.empty() && !rec.image_digest.empty() && rec.image_digest != key.image_digest) {
    return std::nullopt;
  }
  return GramVector{source_dim_for(s.dim), s.rows[it->second]};
}

void GramCache::put(const CacheKey& key, const GramVector& v) {
  Shard& s = shard(key.backbone_id, key.layer_index);
  std::unique_lock lock(s.mutex);
  if (s.dim == 0) s.dim = v.size();
  if (v.size() != s.dim) {
    throw InputError("cache shard " + shard_dir(key.backbone_id, key.layer_index).string() + " holds vectors of length " +
                     std::to_string(s.dim) + ", got " + std::to_string(v.size()));
  }
  VectorRecord rec{key.image_id, key.preprocessing_hash, key.image_digest};
  const auto it = s.index.find({key.image_id, key.preprocessing_hash});
  if (it != s.index.end()) {
    s.records[it->second] = std::move(rec);
    s.rows[it->second] = v.values;
  } else {
    s.index[{key.image_id, key.preprocessing_hash}] = s.rows.size();
    s.records.push_back(std::move(rec));
    s.rows.push_back(v.values);
  }
  s.dirty = true;
}

void GramCache::flush() {
  std::lock_guard lock(shards_mutex_);
  for (auto& [key, s] : shards_) {
    std::unique_lock shard_lock(s->mutex);
    if (!s->dirty) continue;
    VectorBundle b;
    b.backbone_id = s->backbone_id;
    b.layer_index = s->layer;
    b.source_dim = source_dim_for(s->dim);
    b.records = s->records;
    b.vectors = VectorSet(s->dim);
    for (const auto& row : s->rows) b.vectors.push_back(row);
    write_vector_bundle(shard_dir(s->backbone_id, s->layer), b);
    s->dirty = false;
  }
}

}  // namespace gmmd

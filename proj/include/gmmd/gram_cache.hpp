#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "gmmd/gram.hpp"
#include "gmmd/vector_set.hpp"

namespace gmmd {

inline constexpr const char* kVectorsFile = "vectors.npy";
inline constexpr const char* kManifestFile = "manifest.json";

struct VectorRecord {
  std::string id;
  std::string preprocessing_hash;
  std::string image_digest;
};

/// One `vectors.npy` + `manifest.json` pair: Gram vectors of a (backbone,
/// layer) or raw embeddings, one row per record.
struct VectorBundle {
  std::string kind = "gram";  // "gram" or "embedding"
  std::string backbone_id;
  int layer_index = 0;
  std::size_t source_dim = 0;  // Gram matrix side; 0 for embeddings
  std::vector<VectorRecord> records;
  VectorSet vectors;
};

void write_vector_bundle(const std::filesystem::path& dir, const VectorBundle& bundle);

/// Reads and verifies a bundle. Row hash mismatches raise CorruptionError,
/// schema problems InputError; unknown manifest keys are reported through
/// `warnings` when given.
VectorBundle read_vector_bundle(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

/// Side d of a Gram matrix whose upper triangle has m entries.
std::size_t source_dim_for(std::size_t m);

struct CacheKey {
  std::string backbone_id;
  int layer_index = 0;
  std::string image_id;
  std::string preprocessing_hash;
  /// Optional content digest; a stored row with a different digest is a miss.
  std::string image_digest;
};

/// On-disk Gram vector store laid out as <root>/<backbone>/<layer>/{vectors.npy,
/// manifest.json}. Shards load lazily and are written back by flush().
/// Concurrent get() calls share a lock; put() takes the shard exclusively.
class GramCache {
 public:
  explicit GramCache(std::filesystem::path root);
  ~GramCache();

  /// $GMMD_CACHE_DIR, or ./cache when unset.
  static std::filesystem::path default_root();

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path shard_dir(const std::string& backbone_id, int layer) const;

  std::optional<GramVector> get(const CacheKey& key);
  void put(const CacheKey& key, const GramVector& v);
  void flush();

 private:
  struct Shard;
  Shard& shard(const std::string& backbone_id, int layer);

  std::filesystem::path root_;
  std::mutex shards_mutex_;
  std::map<std::pair<std::string, int>, std::unique_ptr<Shard>> shards_;
};

}  // namespace gmmd

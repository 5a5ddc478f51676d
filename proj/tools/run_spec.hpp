#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gmmd::cli {

enum class Kind {
  String,
  Path,
  Int,
  Double,
  Bool,
  IntList,
  DoubleList,
  Images,     // directory, or {"synthetic": {"count", "size", "seed"}}
  Backbones,  // list of ids/sidecars or {"backbone", "layers"} objects
};

struct OptionDef {
  std::string key;  // camelCase spec key; the flag is its kebab-case form
  Kind kind = Kind::String;
  std::string help;
  nlohmann::json fallback = nullptr;
  bool hashed = true;  // part of the spec hash; off for output location and threads
};

std::string flag_name(const std::string& key);

/// Resolved run-spec: JSON file values overridden by flags, then defaults.
class RunSpec {
 public:
  RunSpec(std::string command, nlohmann::json values, const std::vector<OptionDef>& defs);

  const std::string& command() const { return command_; }
  const nlohmann::json& values() const { return values_; }
  /// Hashed fields only, canonical key order.
  nlohmann::json hashed_values() const;
  /// First 16 hex digits of SHA-256 over the canonical hashed values.
  const std::string& hash() const { return hash_; }
  /// "gmmd <version> spec <hash>", the header line of every output.
  std::string stamp() const;

  bool has(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t seed() const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> ints(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  const nlohmann::json& raw(const std::string& key) const;

 private:
  std::string command_;
  nlohmann::json values_;
  std::map<std::string, bool> hashed_;
  std::string hash_;
};

/// Converts a flag string to the JSON value of an option kind. Throws UsageError.
nlohmann::json parse_flag_value(const OptionDef& def, const std::string& text);

/// Validates a spec-file value and resolves relative paths against `base`.
nlohmann::json normalize_spec_value(const OptionDef& def, const nlohmann::json& value,
                                    const std::filesystem::path& base);

/// Loads a JSON spec file; unknown keys are a usage error.
nlohmann::json load_spec_file(const std::filesystem::path& path, const std::vector<OptionDef>& defs);

}  // namespace gmmd::cli

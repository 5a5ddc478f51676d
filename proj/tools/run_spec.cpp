#include "run_spec.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gmmd/backbone.hpp"
#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"
#include "gmmd/version.hpp"

namespace gmmd::cli {

using nlohmann::json;

std::string flag_name(const std::string& key) {
  std::string out = "--";
  for (char c : key) {
    if (c >= 'A' && c <= 'Z') {
      out += '-';
      out += static_cast<char>(c - 'A' + 'a');
    } else {
      out += c;
    }
  }
  return out;
}

namespace {

[[noreturn]] void bad(const OptionDef& def, const std::string& what) {
  throw UsageError(flag_name(def.key) + ": " + what);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::int64_t to_int(const OptionDef& def, const std::string& t) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) bad(def, "'" + t + "' is not an integer");
  return v;
}

double to_double(const OptionDef& def, const std::string& t) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    bad(def, "'" + t + "' is not a number");
  return v;
}

json synthetic_images(const OptionDef& def, const json& s) {
  if (!s.is_object()) bad(def, "synthetic image set must be an object");
  json out = json::object();
  for (const auto& [k, v] : s.items()) {
    if (k != "count" && k != "size" && k != "seed") bad(def, "unknown synthetic field '" + k + "'");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad(def, "synthetic " + k + " must be a non-negative integer");
    out[k] = v;
  }
  if (!out.contains("count") || !out.contains("size")) bad(def, "synthetic image set needs count and size");
  if (out["count"].get<std::int64_t>() < 2) bad(def, "synthetic count must be at least 2");
  if (out["size"].get<std::int64_t>() < 8) bad(def, "synthetic size must be at least 8");
  if (!out.contains("seed")) out["seed"] = 0;
  return json{{"synthetic", out}};
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (base.empty() || p.empty()) return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

bool is_builtin_backbone(const std::string& id) { return id == kPixelPatchId; }

}  // namespace

json parse_flag_value(const OptionDef& def, const std::string& text) {
  switch (def.kind) {
    case Kind::String:
    case Kind::Path:
      return text;
    case Kind::Int:
      return to_int(def, text);
    case Kind::Double:
      return to_double(def, text);
    case Kind::Bool:
      return true;
    case Kind::IntList: {
      json out = json::array();
      for (const auto& p : split(text, ',')) out.push_back(to_int(def, p));
      return out;
    }
    case Kind::DoubleList: {
      json out = json::array();
      for (const auto& p : split(text, ',')) out.push_back(to_double(def, p));
      return out;
    }
    case Kind::Images: {
      if (text.rfind("synthetic:", 0) == 0) {
        const auto parts = split(text.substr(10), ':');
        if (parts.size() < 2 || parts.size() > 3) bad(def, "expected synthetic:COUNT:SIZE[:SEED]");
        json s{{"count", to_int(def, parts[0])}, {"size", to_int(def, parts[1])}};
        if (parts.size() == 3) s["seed"] = to_int(def, parts[2]);
        return synthetic_images(def, s);
      }
      return text;
    }
    case Kind::Backbones: {
      json out = json::array();
      for (const auto& p : split(text, ',')) {
        if (p.empty()) bad(def, "empty backbone entry");
        out.push_back(json{{"backbone", p}});
      }
      return out;
    }
  }
  return nullptr;
}

json normalize_spec_value(const OptionDef& def, const json& v, const std::filesystem::path& base) {
  switch (def.kind) {
    case Kind::String:
      if (!v.is_string()) bad(def, "expected a string");
      return v;
    case Kind::Path:
      if (!v.is_string()) bad(def, "expected a path string");
      return resolve(v.get<std::string>(), base);
    case Kind::Int:
      if (!v.is_number_integer()) bad(def, "expected an integer");
      return v;
    case Kind::Double:
      if (!v.is_number()) bad(def, "expected a number");
      return v.get<double>();
    case Kind::Bool:
      if (!v.is_boolean()) bad(def, "expected true or false");
      return v;
    case Kind::IntList:
    case Kind::DoubleList: {
      if (!v.is_array()) bad(def, "expected an array");
      json out = json::array();
      for (const auto& x : v) {
        if (def.kind == Kind::IntList && !x.is_number_integer()) bad(def, "expected integers");
        if (def.kind == Kind::DoubleList && !x.is_number()) bad(def, "expected numbers");
        out.push_back(def.kind == Kind::IntList ? json(x.get<std::int64_t>()) : json(x.get<double>()));
      }
      return out;
    }
    case Kind::Images:
      if (v.is_string()) return resolve(v.get<std::string>(), base);
      if (v.is_object() && v.size() == 1 && v.contains("synthetic")) return synthetic_images(def, v["synthetic"]);
      bad(def, "expected a directory or {\"synthetic\": {...}}");
    case Kind::Backbones: {
      if (!v.is_array() || v.empty()) bad(def, "expected a non-empty array");
      json out = json::array();
      for (const auto& e : v) {
        json entry;
        if (e.is_string()) {
          entry["backbone"] = e;
        } else if (e.is_object()) {
          for (const auto& [k, x] : e.items())
            if (k != "backbone" && k != "layers") bad(def, "unknown backbone field '" + k + "'");
          if (!e.contains("backbone") || !e["backbone"].is_string()) bad(def, "backbone entry needs a 'backbone' string");
          entry["backbone"] = e["backbone"];
          if (e.contains("layers")) {
            OptionDef layers{"layers", Kind::IntList, "", nullptr, true};
            entry["layers"] = normalize_spec_value(layers, e["layers"], base);
          }
        } else {
          bad(def, "backbone entries are strings or objects");
        }
        const auto id = entry["backbone"].get<std::string>();
        if (!is_builtin_backbone(id)) entry["backbone"] = resolve(id, base);
        out.push_back(entry);
      }
      return out;
    }
  }
  return nullptr;
}

json load_spec_file(const std::filesystem::path& path, const std::vector<OptionDef>& defs) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open spec file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("spec file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("spec file " + path.string() + " must hold a JSON object");
  const auto base = std::filesystem::absolute(path).parent_path();
  json out = json::object();
  for (const auto& [k, v] : j.items()) {
    const auto it = std::find_if(defs.begin(), defs.end(), [&](const OptionDef& d) { return d.key == k; });
    if (it == defs.end() || k == "spec" || k == "dryRun") throw UsageError("spec file: unknown field '" + k + "'");
    out[k] = normalize_spec_value(*it, v, base);
  }
  return out;
}

RunSpec::RunSpec(std::string command, json values, const std::vector<OptionDef>& defs)
    : command_(std::move(command)), values_(std::move(values)) {
  for (const auto& d : defs) {
    hashed_[d.key] = d.hashed;
    if (!values_.contains(d.key) && !d.fallback.is_null()) values_[d.key] = d.fallback;
  }
  hash_ = sha256_hex(hashed_values().dump()).substr(0, 16);
}

json RunSpec::hashed_values() const {
  json out = json::object();
  out["command"] = command_;
  for (const auto& [k, v] : values_.items()) {
    const auto it = hashed_.find(k);
    if (it != hashed_.end() && it->second) out[k] = v;
  }
  return out;
}

std::string RunSpec::stamp() const { return std::string("gmmd ") + kVersion + " spec " + hash_; }

bool RunSpec::has(const std::string& key) const { return values_.contains(key) && !values_[key].is_null(); }

const json& RunSpec::raw(const std::string& key) const {
  if (!has(key)) throw UsageError("missing required option " + flag_name(key));
  return values_[key];
}

std::string RunSpec::str(const std::string& key) const { return raw(key).get<std::string>(); }
std::filesystem::path RunSpec::path(const std::string& key) const { return raw(key).get<std::string>(); }
std::int64_t RunSpec::integer(const std::string& key) const { return raw(key).get<std::int64_t>(); }
double RunSpec::real(const std::string& key) const { return raw(key).get<double>(); }
bool RunSpec::flag(const std::string& key) const { return has(key) && values_[key].get<bool>(); }

std::uint64_t RunSpec::seed() const {
  const auto s = integer("seed");
  if (s < 0) throw UsageError("--seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

std::vector<int> RunSpec::ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& v : raw(key)) out.push_back(static_cast<int>(v.get<std::int64_t>()));
  return out;
}

std::vector<double> RunSpec::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& v : raw(key)) out.push_back(v.get<double>());
  return out;
}

}  // namespace gmmd::cli

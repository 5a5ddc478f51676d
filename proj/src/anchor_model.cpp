#include "gmmd/anchor_model.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gmmd/error.hpp"
#include "gmmd/npy.hpp"
#include "gmmd/version.hpp"

namespace gmmd {

namespace {

constexpr std::string_view kMagic = "GMMD-ANCHOR/1\n";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double from_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw InputError("bad hexfloat '" + s + "' in anchor header");
  return v;
}

std::vector<std::string> hex_array(std::span<const double> xs) {
  std::vector<std::string> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(hexfloat(x));
  return out;
}

std::vector<double> parse_hex_array(const nlohmann::json& j, std::size_t expected, const char* what) {
  if (!j.is_array() || j.size() != expected) {
    throw InputError(std::string("anchor header field '") + what + "' has the wrong length");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : j) out.push_back(from_hexfloat(v.get<std::string>()));
  return out;
}

}  // namespace

VectorSet AnchorModel::standardize(const VectorSet& raw) const {
  if (raw.dim() != standardizer.size()) {
    throw InputError("evaluation vectors have " + std::to_string(raw.dim()) + " components, anchor model for " +
                     backbone_id + " layer " + std::to_string(layer_index) + " has " +
                     std::to_string(standardizer.size()));
  }
  std::vector<double> out(raw.data().begin(), raw.data().end());
  const std::size_t m = raw.dim();
  for (std::size_t r = 0; r < raw.size(); ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      out[r * m + c] = (out[r * m + c] - standardizer.mean[c]) / standardizer.stddev[c];
    }
  }
  return VectorSet(raw.size(), m, std::move(out));
}

AnchorModel fit_anchor_model(const std::string& backbone_id, int layer, const VectorSet& raw,
                             AnchorProvenance provenance, double epsilon_floor, std::size_t max_exact_pairs) {
  if (raw.size() < 2) throw FitError("anchor set needs at least 2 images, got " + std::to_string(raw.size()));
  std::size_t source_dim = 0;
  while (upper_tri_size(source_dim) < raw.dim()) ++source_dim;
  if (upper_tri_size(source_dim) != raw.dim()) {
    throw InputError("vector length " + std::to_string(raw.dim()) + " is not d(d+1)/2");
  }
  const auto grams = raw.to_gram_vectors(source_dim);

  AnchorModel model;
  model.backbone_id = backbone_id;
  model.layer_index = layer;
  model.source_dim = source_dim;
  model.standardizer = fit_standardizer(grams, epsilon_floor);
  model.vectors = model.standardize(raw);
  const auto med = median_heuristic(model.vectors, max_exact_pairs, provenance.seed);
  model.gamma_med = med.gamma;
  model.median_pairs = med.pairs_used;
  model.median_subsampled = med.subsampled;
  model.provenance = std::move(provenance);
  return model;
}

AnchorModel build_anchor_model(FeatureProvider& features, int layer, std::span<const LabeledImage> anchor_images,
                               std::uint64_t seed, double epsilon_floor, std::size_t max_exact_pairs) {
  if (anchor_images.size() < 2) {
    throw FitError("anchor set needs at least 2 images, got " + std::to_string(anchor_images.size()));
  }
  AnchorProvenance prov;
  for (const auto& im : anchor_images) prov.image_ids.push_back(im.id);
  prov.seed = seed;
  prov.preprocessing_hash = features.preprocessing_hash();
  const VectorSet raw = features.gram_vectors(anchor_images, layer);
  return fit_anchor_model(features.backbone_id(), layer, raw, std::move(prov), epsilon_floor, max_exact_pairs);
}

void save_anchor_model(const std::filesystem::path& path, const AnchorModel& model) {
  nlohmann::json h;
  h["format"] = "gmmd-anchor";
  h["version"] = 1;
  h["toolkitVersion"] = kVersion;
  h["backboneId"] = model.backbone_id;
  h["layerIndex"] = model.layer_index;
  h["sourceDim"] = model.source_dim;
  h["dim"] = model.standardizer.size();
  h["anchorCount"] = model.vectors.size();
  h["gammaMed"] = model.gamma_med;
  h["gammaMedHex"] = hexfloat(model.gamma_med);
  h["medianPairs"] = model.median_pairs;
  h["medianSubsampled"] = model.median_subsampled;
  h["epsilonFloor"] = hexfloat(model.standardizer.epsilon_floor);
  h["mu"] = hex_array(model.standardizer.mean);
  h["sigma"] = hex_array(model.standardizer.stddev);
  h["provenance"] = {{"imageIds", model.provenance.image_ids},
                     {"seed", model.provenance.seed},
                     {"preprocessingHash", model.provenance.preprocessing_hash}};
  const std::string header = h.dump();

  std::ostringstream body;
  body << kMagic;
  char len_bytes[8];
  for (int b = 0; b < 8; ++b) len_bytes[b] = static_cast<char>((header.size() >> (8 * b)) & 0xFF);
  body.write(len_bytes, sizeof len_bytes);
  body << header;
  const std::size_t shape[2] = {model.vectors.size(), model.vectors.dim()};
  write_npy(body, shape, model.vectors.data());

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    const std::string bytes = body.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

AnchorModel load_anchor_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open anchor model " + path.string());
  std::string magic(kMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw InputError(path.string() + " is not a gmmd anchor model");
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), sizeof len_bytes);
  std::uint64_t len = 0;
  for (int b = 7; b >= 0; --b) len = (len << 8) | len_bytes[b];
  if (!in || len > (1ull << 32)) throw InputError(path.string() + ": bad header length");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError(path.string() + ": truncated header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  AnchorModel m;
  try {
    if (h.at("format") != "gmmd-anchor" || h.at("version") != 1) {
      throw InputError(path.string() + ": unsupported anchor format");
    }
    m.backbone_id = h.at("backboneId").get<std::string>();
    m.layer_index = h.at("layerIndex").get<int>();
    m.source_dim = h.at("sourceDim").get<std::size_t>();
    const auto dim = h.at("dim").get<std::size_t>();
    m.gamma_med = from_hexfloat(h.at("gammaMedHex").get<std::string>());
    m.median_pairs = h.value("medianPairs", std::size_t{0});
    m.median_subsampled = h.value("medianSubsampled", false);
    m.standardizer.epsilon_floor = from_hexfloat(h.at("epsilonFloor").get<std::string>());
    m.standardizer.mean = parse_hex_array(h.at("mu"), dim, "mu");
    m.standardizer.stddev = parse_hex_array(h.at("sigma"), dim, "sigma");
    const auto& p = h.at("provenance");
    m.provenance.image_ids = p.at("imageIds").get<std::vector<std::string>>();
    m.provenance.seed = p.at("seed").get<std::uint64_t>();
    m.provenance.preprocessing_hash = p.at("preprocessingHash").get<std::string>();
    if (upper_tri_size(m.source_dim) != dim) throw InputError(path.string() + ": sourceDim does not match dim");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }

  const NpyArray arr = read_npy(in);
  if (arr.shape.size() != 2 || arr.shape[1] != m.standardizer.size() || arr.descr != "<f8") {
    throw InputError(path.string() + ": anchor vectors do not match the header");
  }
  if (arr.shape[0] != m.provenance.image_ids.size()) {
    throw InputError(path.string() + ": anchor vector count does not match provenance");
  }
  m.vectors = VectorSet(arr.shape[0], arr.shape[1], arr.data);
  return m;
}

}  // namespace gmmd

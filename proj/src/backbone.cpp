#include "gmmd/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"
#include "gmmd/onnx_graph.hpp"
#include "gmmd/parallel.hpp"

namespace gmmd {

using nlohmann::json;

std::string to_string(Family family) { return family == Family::CNN ? "cnn" : "tokens"; }

Family family_from_string(const std::string& name) {
  if (name == "cnn") return Family::CNN;
  if (name == "tokens") return Family::Tokens;
  throw InputError("unknown backbone family '" + name + "' (expected cnn or tokens)");
}

namespace {

const char* resize_name(ResizePolicy p) {
  switch (p) {
    case ResizePolicy::None: return "none";
    case ResizePolicy::Exact: return "exact";
    case ResizePolicy::ShortSide: return "short-side";
    case ResizePolicy::MultipleOf: return "multiple-of";
  }
  return "none";
}

ResizePolicy resize_from_name(const std::string& s) {
  if (s == "none") return ResizePolicy::None;
  if (s == "exact") return ResizePolicy::Exact;
  if (s == "short-side") return ResizePolicy::ShortSide;
  if (s == "multiple-of") return ResizePolicy::MultipleOf;
  throw InputError("unknown resize policy '" + s + "'");
}

std::array<double, 3> triple(const json& j, const char* key, std::array<double, 3> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<double>(), v.get<double>(), v.get<double>()};
  if (!v.is_array() || v.size() != 3) throw InputError(std::string("preprocessing.") + key + " needs 3 values");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

ImageBuffer center_crop(const ImageBuffer& img, std::size_t h, std::size_t w) {
  if (h > img.height() || w > img.width()) {
    throw InputError("crop " + std::to_string(h) + "x" + std::to_string(w) + " exceeds image " +
                     std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  const std::size_t y0 = (img.height() - h) / 2, x0 = (img.width() - w) / 2;
  ImageBuffer out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

}  // namespace

json Preprocessing::to_json() const {
  json j;
  j["resize"] = resize_name(resize);
  if (resize == ResizePolicy::Exact) j["size"] = {height, width};
  if (resize == ResizePolicy::ShortSide) j["size"] = short_side;
  if (resize == ResizePolicy::MultipleOf) j["multiple"] = multiple;
  if (crop_height > 0) j["crop"] = {crop_height, crop_width};
  j["mean"] = mean;
  j["std"] = std;
  return j;
}

Preprocessing Preprocessing::from_json(const json& j) {
  Preprocessing p;
  try {
    p.resize = resize_from_name(j.value("resize", std::string("none")));
    switch (p.resize) {
      case ResizePolicy::Exact:
        p.height = j.at("size").at(0).get<std::size_t>();
        p.width = j.at("size").at(1).get<std::size_t>();
        break;
      case ResizePolicy::ShortSide: p.short_side = j.at("size").get<std::size_t>(); break;
      case ResizePolicy::MultipleOf: p.multiple = j.at("multiple").get<std::size_t>(); break;
      case ResizePolicy::None: break;
    }
    if (j.contains("crop")) {
      p.crop_height = j.at("crop").at(0).get<std::size_t>();
      p.crop_width = j.at("crop").at(1).get<std::size_t>();
    }
    p.mean = triple(j, "mean", p.mean);
    p.std = triple(j, "std", p.std);
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid preprocessing block: ") + e.what());
  }
  for (double s : p.std) {
    if (!(s > 0.0)) throw InputError("preprocessing std must be positive");
  }
  return p;
}

std::string Preprocessing::hash() const { return sha256_hex(to_json().dump()); }

ImageBuffer resize_for_model(const ImageBuffer& img, const Preprocessing& p) {
  if (img.empty()) throw InputError("cannot preprocess an empty image");
  ImageBuffer out;
  switch (p.resize) {
    case ResizePolicy::None: out = img; break;
    case ResizePolicy::Exact: out = resize_bilinear(img, p.height, p.width); break;
    case ResizePolicy::ShortSide: {
      const double scale = static_cast<double>(p.short_side) / static_cast<double>(std::min(img.height(), img.width()));
      const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height() * scale)));
      const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width() * scale)));
      out = resize_bilinear(img, h, w);
      break;
    }
    case ResizePolicy::MultipleOf: {
      const std::size_t k = p.multiple;
      const std::size_t h = std::max(k, img.height() / k * k), w = std::max(k, img.width() / k * k);
      out = (h == img.height() && w == img.width()) ? img : resize_bilinear(img, h, w);
      break;
    }
  }
  if (p.crop_height > 0) out = center_crop(out, p.crop_height, p.crop_width);
  return out;
}

ModelInput preprocess(const ImageBuffer& img, const Preprocessing& p) {
  const ImageBuffer r = resize_for_model(img, p);
  ModelInput in{r.height(), r.width(), std::vector<float>(3 * r.height() * r.width())};
  const std::size_t plane = r.height() * r.width();
  for (std::size_t y = 0; y < r.height(); ++y) {
    for (std::size_t x = 0; x < r.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        in.chw[c * plane + y * r.width() + x] = static_cast<float>((r.at(y, x, c) - p.mean[c]) / p.std[c]);
      }
    }
  }
  return in;
}

BackboneSpec BackboneSpec::load(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw InputError("cannot open backbone sidecar " + sidecar.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("backbone sidecar " + sidecar.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, sidecar.parent_path());
}

BackboneSpec BackboneSpec::from_json(const json& j, const std::filesystem::path& base_dir) {
  BackboneSpec s;
  try {
    s.backbone_id = j.at("backboneId").get<std::string>();
    s.family = family_from_string(j.at("family").get<std::string>());
    if (j.contains("modelFile")) {
      std::filesystem::path m = j.at("modelFile").get<std::string>();
      s.model_file = m.is_relative() ? base_dir / m : m;
    }
    for (const auto& [k, v] : j.at("layerOutputs").items()) s.layer_outputs.emplace(std::stoi(k), v.get<std::string>());
    if (j.contains("preprocessing")) s.preprocessing = Preprocessing::from_json(j.at("preprocessing"));
    s.patch_size = j.value("patchSize", std::size_t{0});
    s.special_tokens = j.value("specialTokens", std::size_t{0});
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid backbone sidecar: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw InputError("layerOutputs keys must be integer layer indices");
  }
  if (s.backbone_id.empty() || s.backbone_id.find('/') != std::string::npos) {
    throw InputError("backboneId must be a non-empty name without '/'");
  }
  if (s.layer_outputs.empty()) throw InputError("backbone sidecar declares no layerOutputs");
  return s;
}

json BackboneSpec::to_json() const {
  json j;
  j["backboneId"] = backbone_id;
  j["family"] = to_string(family);
  if (!model_file.empty()) j["modelFile"] = model_file.string();
  json layers = json::object();
  for (const auto& [k, v] : layer_outputs) layers[std::to_string(k)] = v;
  j["layerOutputs"] = layers;
  j["preprocessing"] = preprocessing.to_json();
  if (family == Family::Tokens) {
    j["patchSize"] = patch_size;
    j["specialTokens"] = special_tokens;
  }
  return j;
}

std::vector<int> BackboneSpec::layers() const {
  std::vector<int> out;
  for (const auto& [k, v] : layer_outputs) out.push_back(k);
  return out;
}

const std::string& BackboneSpec::output_for(int layer) const {
  const auto it = layer_outputs.find(layer);
  if (it == layer_outputs.end()) {
    throw InputError("backbone '" + backbone_id + "' has no layer " + std::to_string(layer));
  }
  return it->second;
}

ActivationTensor FeatureExtractor::extract(const ImageBuffer& img, int layer) const {
  const int layers[] = {layer};
  return std::move(extract(img, layers).front());
}

namespace {

class PixelPatch final : public FeatureExtractor {
 public:
  PixelPatch() {
    spec_.backbone_id = kPixelPatchId;
    spec_.family = Family::CNN;
    spec_.layer_outputs = {{1, "pool8"}, {2, "pool4"}, {3, "pool2"}, {4, "pool1"}};
  }

  const BackboneSpec& spec() const override { return spec_; }
  using FeatureExtractor::extract;

  std::vector<ActivationTensor> extract(const ImageBuffer& img, std::span<const int> layers) const override {
    const ModelInput in = preprocess(img, spec_.preprocessing);
    std::vector<ActivationTensor> out;
    for (int layer : layers) {
      spec_.output_for(layer);
      out.push_back(pool(in, std::size_t{8} >> (layer - 1)));
    }
    return out;
  }

  std::vector<double> embedding(const ImageBuffer& img, int layer) const override {
    const auto act = extract(img, layer);
    return {act.values().begin(), act.values().end()};
  }

 private:
  static ActivationTensor pool(const ModelInput& in, std::size_t block) {
    const std::size_t oh = (in.height + block - 1) / block, ow = (in.width + block - 1) / block;
    const std::size_t plane = in.height * in.width;
    std::vector<double> v(3 * oh * ow);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t by = 0; by < oh; ++by) {
        for (std::size_t bx = 0; bx < ow; ++bx) {
          const std::size_t y1 = std::min(in.height, (by + 1) * block);
          const std::size_t x1 = std::min(in.width, (bx + 1) * block);
          double acc = 0.0;
          for (std::size_t y = by * block; y < y1; ++y)
            for (std::size_t x = bx * block; x < x1; ++x) acc += in.chw[c * plane + y * in.width + x];
          v[(c * oh + by) * ow + bx] = acc / static_cast<double>((y1 - by * block) * (x1 - bx * block));
        }
      }
    }
    return ActivationTensor::cnn(3, oh, ow, std::move(v));
  }

  BackboneSpec spec_;
};

class OnnxBackbone final : public FeatureExtractor {
 public:
  explicit OnnxBackbone(BackboneSpec spec) : spec_(std::move(spec)), graph_(onnx::Graph::load(spec_.model_file)) {
    for (const auto& [layer, name] : spec_.layer_outputs) {
      if (!graph_.has_value(name)) {
        throw InferenceError("model " + spec_.model_file.string() + " has no output '" + name + "' for layer " +
                             std::to_string(layer));
      }
    }
  }

  const BackboneSpec& spec() const override { return spec_; }
  using FeatureExtractor::extract;

  std::vector<ActivationTensor> extract(const ImageBuffer& img, std::span<const int> layers) const override {
    ModelInput in;
    const auto outputs = run(img, layers, in);
    std::vector<ActivationTensor> acts;
    for (int layer : layers) acts.push_back(to_activation(outputs.at(spec_.output_for(layer)), layer, in));
    return acts;
  }

  std::vector<double> embedding(const ImageBuffer& img, int layer) const override {
    ModelInput in;
    const int layers[] = {layer};
    const auto outputs = run(img, layers, in);
    const auto& t = outputs.at(spec_.output_for(layer));
    if (t.dtype != onnx::DType::Float) throw InferenceError("embedding output is not floating point");
    return {t.f.begin(), t.f.end()};
  }

 private:
  std::map<std::string, onnx::Tensor> run(const ImageBuffer& img, std::span<const int> layers, ModelInput& in) const {
    in = preprocess(img, spec_.preprocessing);
    std::vector<std::string> wanted;
    for (int layer : layers) wanted.push_back(spec_.output_for(layer));
    const auto h = static_cast<std::int64_t>(in.height), w = static_cast<std::int64_t>(in.width);
    return graph_.run(onnx::Tensor::floats({1, 3, h, w}, in.chw), wanted);
  }

  ActivationTensor to_activation(const onnx::Tensor& t, int layer, const ModelInput& in) const {
    if (t.dtype != onnx::DType::Float) throw InferenceError("layer output is not floating point");
    std::vector<std::int64_t> shape = t.shape;
    if (!shape.empty() && shape.front() == 1 && shape.size() > 2) shape.erase(shape.begin());
    const std::vector<double> values(t.f.begin(), t.f.end());
    const std::string where = "layer " + std::to_string(layer) + " ('" + spec_.output_for(layer) + "')";
    if (spec_.family == Family::CNN) {
      if (shape.size() != 3) throw InferenceError(where + " is not a C x H x W feature map");
      return ActivationTensor::cnn(static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]),
                                   static_cast<std::size_t>(shape[2]), values);
    }
    if (shape.size() != 2) throw InferenceError(where + " is not a tokens x dim tensor");
    const auto total = static_cast<std::size_t>(shape[0]);
    const auto dim = static_cast<std::size_t>(shape[1]);
    if (total <= spec_.special_tokens) throw InferenceError(where + " has no patch tokens");
    const std::size_t n = total - spec_.special_tokens;
    if (spec_.patch_size > 0) {
      const std::size_t grid = (in.height / spec_.patch_size) * (in.width / spec_.patch_size);
      if (n != grid) {
        throw InferenceError(where + " has " + std::to_string(n) + " patch tokens, expected " + std::to_string(grid) +
                             " for a " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                             " input with patch size " + std::to_string(spec_.patch_size));
      }
    }
    return ActivationTensor::tokens(n, dim, {values.begin() + static_cast<std::ptrdiff_t>(spec_.special_tokens * dim),
                                             values.end()});
  }

  BackboneSpec spec_;
  onnx::Graph graph_;
};

}  // namespace

std::unique_ptr<FeatureExtractor> make_pixel_patch_backbone() { return std::make_unique<PixelPatch>(); }

std::unique_ptr<FeatureExtractor> make_onnx_backbone(const BackboneSpec& spec) {
  if (spec.model_file.empty()) throw InputError("backbone '" + spec.backbone_id + "' has no modelFile");
  return std::make_unique<OnnxBackbone>(spec);
}

std::unique_ptr<FeatureExtractor> open_backbone(const std::string& id_or_sidecar) {
  if (id_or_sidecar == kPixelPatchId) return make_pixel_patch_backbone();
  return make_onnx_backbone(BackboneSpec::load(id_or_sidecar));
}

std::vector<ActivationTensor> extract_activations(const FeatureExtractor& fx, int layer,
                                                  std::span<const LabeledImage> images, unsigned threads) {
  std::vector<std::optional<ActivationTensor>> slots(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    try {
      slots[i] = fx.extract(images[i].image, layer);
    } catch (const Error& e) {
      throw InferenceError(fx.spec().backbone_id + " layer " + std::to_string(layer) + ", image '" + images[i].id +
                           "': " + e.what());
    }
  });
  std::vector<ActivationTensor> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace gmmd

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmmd/gram.hpp"
#include "gmmd/image.hpp"

namespace gmmd {

enum class Family { CNN, Tokens };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

enum class ResizePolicy { None, Exact, ShortSide, MultipleOf };

/// How an image is turned into a model input: optional resize, optional
/// centre crop, then per-channel (x - mean) / std on [0, 1] samples.
struct Preprocessing {
  ResizePolicy resize = ResizePolicy::None;
  std::size_t height = 0;      // Exact
  std::size_t width = 0;       // Exact
  std::size_t short_side = 0;  // ShortSide
  std::size_t multiple = 0;    // MultipleOf: each side rounded down to a multiple
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  nlohmann::json to_json() const;
  static Preprocessing from_json(const nlohmann::json& j);
  /// Digest of the canonical JSON form, recorded in provenance and cache keys.
  std::string hash() const;
};

/// Channel-major normalized input of one image.
struct ModelInput {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> chw;
};

ImageBuffer resize_for_model(const ImageBuffer& img, const Preprocessing& p);
ModelInput preprocess(const ImageBuffer& img, const Preprocessing& p);

struct BackboneSpec {
  std::string backbone_id;
  Family family = Family::CNN;
  std::filesystem::path model_file;  // empty for built-in backbones
  std::map<int, std::string> layer_outputs;
  Preprocessing preprocessing;
  std::size_t patch_size = 0;      // token family: side of a square patch
  std::size_t special_tokens = 0;  // token family: leading CLS/register tokens to drop

  /// Reads a JSON sidecar; a relative modelFile resolves against its directory.
  static BackboneSpec load(const std::filesystem::path& sidecar);
  static BackboneSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  std::vector<int> layers() const;
  const std::string& output_for(int layer) const;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual const BackboneSpec& spec() const = 0;
  /// Activations of one image for each requested layer, in request order.
  /// Implementations are safe to call concurrently.
  virtual std::vector<ActivationTensor> extract(const ImageBuffer& img, std::span<const int> layers) const = 0;
  /// Flattened output of a layer; used for embedding baselines.
  virtual std::vector<double> embedding(const ImageBuffer& img, int layer) const = 0;

  ActivationTensor extract(const ImageBuffer& img, int layer) const;
};

inline constexpr const char* kPixelPatchId = "pixel-patch";

/// Built-in toy backbone. Layer l average-pools RGB over blocks of side
/// 8 / 2^(l-1) (8, 4, 2, 1); edge blocks average the pixels they cover.
std::unique_ptr<FeatureExtractor> make_pixel_patch_backbone();

/// ONNX model described by a sidecar.
std::unique_ptr<FeatureExtractor> make_onnx_backbone(const BackboneSpec& spec);

/// "pixel-patch" or the path of a JSON sidecar.
std::unique_ptr<FeatureExtractor> open_backbone(const std::string& id_or_sidecar);

/// Activations of a batch; failures name the layer and image id.
std::vector<ActivationTensor> extract_activations(const FeatureExtractor& fx, int layer,
                                                  std::span<const LabeledImage> images, unsigned threads = 1);

}  // namespace gmmd

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gmmd {

/// RGB image with interleaved float samples in [0, 1] (sRGB-encoded).
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, float fill = 0.0f);
  ImageBuffer(std::size_t height, std::size_t width, std::vector<float> data);

  static constexpr std::size_t kChannels = 3;

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * kChannels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * kChannels + c];
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  void clamp();

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// An image with a stable identifier (file stem for images read from disk).
struct LabeledImage {
  std::string id;
  ImageBuffer image;
};

/// Loads a PNG or JPEG file (detected from its signature) as RGB.
ImageBuffer load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG.
void save_png(const std::filesystem::path& path, const ImageBuffer& img);

/// Lists PNG/JPEG files of a directory sorted by file name, ids are file stems.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

std::vector<LabeledImage> load_image_dir(const std::filesystem::path& dir);

std::vector<std::uint8_t> to_rgb8(const ImageBuffer& img);
ImageBuffer from_rgb8(std::size_t height, std::size_t width, const std::uint8_t* rgb);

/// Baseline JPEG encode with 4:2:0 chroma subsampling.
std::vector<std::uint8_t> encode_jpeg(const ImageBuffer& img, int quality);
ImageBuffer decode_jpeg(const std::vector<std::uint8_t>& bytes);

/// Digest of the pixel data and size; identifies image content in caches.
std::string image_digest(const ImageBuffer& img);

/// Bilinear resize to an exact size (area averaging when shrinking by an
/// integer factor).
ImageBuffer resize_bilinear(const ImageBuffer& img, std::size_t height, std::size_t width);

}  // namespace gmmd

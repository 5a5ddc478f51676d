#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmmd/image.hpp"

namespace gmmd {

/// A stationary colour texture process: a fixed set of oriented sinusoids
/// (frequency, orientation, amplitude and a mostly achromatic colour drawn once from
/// `structure_seed`) plus per-pixel grain. Individual draws differ in the
/// wave phases and the grain realisation. Stands in for a family of real
/// images when no dataset is at hand.
struct TextureFamily {
  std::uint64_t structure_seed = 0;
  std::size_t components = 8;
  double min_frequency = 0.02;  // cycles per pixel
  double max_frequency = 0.25;
  double contrast = 0.3;
  double chroma = 0.25;  // colour deviation of each wave from grey
  double grain = 0.03;  // std of per-pixel noise
};

ImageBuffer synthetic_texture(std::size_t height, std::size_t width, const TextureFamily& family,
                              std::uint64_t draw_seed);

/// `count` draws with ids "<prefix>0000", "<prefix>0001", ...
std::vector<LabeledImage> synthetic_textures(std::size_t count, std::size_t size, const TextureFamily& family,
                                             std::uint64_t seed, const std::string& prefix = "tex");

/// Gaussian-smoothed copies; ids get a "~s<sigma>" suffix.
std::vector<LabeledImage> smoothed(std::span<const LabeledImage> images, double sigma);

}  // namespace gmmd

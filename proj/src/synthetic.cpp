#include "gmmd/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "gmmd/degradations.hpp"
#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"
#include "gmmd/format.hpp"

namespace gmmd {

ImageBuffer synthetic_texture(std::size_t height, std::size_t width, const TextureFamily& family,
                              std::uint64_t draw_seed) {
  if (height == 0 || width == 0) throw InputError("synthetic texture needs a non-empty size");
  std::mt19937_64 rng(family.structure_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  struct Wave {
    double kx, ky, phase, amp;
    double color[3];
  };
  std::vector<Wave> waves(family.components);
  double norm = 0.0;
  for (auto& w : waves) {
    const double angle = std::numbers::pi * u01(rng);
    const double f = family.min_frequency + (family.max_frequency - family.min_frequency) * u01(rng);
    w.kx = 2.0 * std::numbers::pi * f * std::cos(angle);
    w.ky = 2.0 * std::numbers::pi * f * std::sin(angle);
    w.amp = 0.3 + 0.7 * u01(rng);
    for (double& c : w.color) c = 1.0 + family.chroma * sym(rng);
    norm += w.amp * w.amp;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  double tint[3];
  for (double& t : tint) t = 0.5 + 0.15 * sym(rng);

  rng.seed(draw_seed);
  for (auto& w : waves) w.phase = 2.0 * std::numbers::pi * u01(rng);
  std::normal_distribution<double> grain(0.0, family.grain);
  ImageBuffer img(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (const auto& w : waves) {
        const double s = w.amp * std::sin(w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y) + w.phase);
        for (int c = 0; c < 3; ++c) acc[c] += s * w.color[c];
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(tint[c] + family.contrast * acc[c] / norm + grain(rng));
      }
    }
  }
  img.clamp();
  return img;
}

std::vector<LabeledImage> synthetic_textures(std::size_t count, std::size_t size, const TextureFamily& family,
                                             std::uint64_t seed, const std::string& prefix) {
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%04zu", i);
    out.push_back({prefix + id, synthetic_texture(size, size, family, combine_seed(seed, i))});
  }
  return out;
}

std::vector<LabeledImage> smoothed(std::span<const LabeledImage> images, double sigma) {
  std::vector<LabeledImage> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back({im.id + "~s" + format_double(sigma), gaussian_blur(im.image, sigma)});
  return out;
}

}  // namespace gmmd

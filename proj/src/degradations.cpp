#include "gmmd/degradations.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>
#include <sstream>

#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"
#include "gmmd/format.hpp"
#include "gmmd/parallel.hpp"

namespace gmmd {

namespace {

using Row = std::array<double, kSeverityLevels>;
constexpr Row kUnused{};

// clang-format off
const std::array<DegradationType, kDegradationTypes> kTypes{{
  {1,  "T1",  "Gaussian noise",       {"sigma", ""},       1, {Row{.002, .004, .006, .009, .011, .013, .015, .018, .020, .022}, kUnused}, true},
  {2,  "T3",  "Multiplicative noise", {"sigma", ""},       1, {Row{.002, .005, .008, .011, .014, .018, .021, .024, .027, .030}, kUnused}, true},
  {3,  "T5",  "Brighten",             {"gamma", ""},       1, {Row{.960, .958, .957, .955, .953, .952, .950, .948, .947, .945}, kUnused}, false},
  {4,  "T6",  "Darken",               {"gamma", ""},       1, {Row{1.100, 1.103, 1.107, 1.110, 1.113, 1.117, 1.120, 1.123, 1.127, 1.130}, kUnused}, false},
  {5,  "T8",  "Jitter",               {"amp", ""},         1, {Row{1.0, 1.4, 1.9, 2.3, 2.8, 3.2, 3.7, 4.1, 4.6, 5.0}, kUnused}, true},
  {6,  "T9",  "Patches",              {"ps", "n"},         2, {Row{4, 5, 5, 6, 7, 7, 8, 9, 9, 10}, Row{1, 2, 2, 3, 3, 4, 4, 5, 5, 6}}, true},
  {7,  "T10", "Pixelate",             {"factor", ""},      1, {Row{2, 2, 2, 2, 2, 3, 3, 3, 3, 3}, kUnused}, false},
  {8,  "T11", "Quantization",         {"bits", ""},        1, {Row{8, 8, 7, 7, 7, 6, 6, 6, 5, 5}, kUnused}, false},
  {9,  "T12", "Fog",                  {"alpha", ""},       1, {Row{.020, .030, .040, .050, .060, .070, .080, .090, .100, .110}, kUnused}, false},
  {10, "T13", "Color cast cool",      {"s", ""},           1, {Row{.020, .027, .033, .040, .047, .053, .060, .067, .073, .080}, kUnused}, false},
  {11, "T15", "Chromatic aberration", {"shift", ""},       1, {Row{1, 1, 1, 2, 2, 2, 2, 3, 3, 3}, kUnused}, false},
  {12, "T16", "Sparse sampling",      {"frac", ""},        1, {Row{.010, .018, .026, .033, .041, .049, .057, .064, .072, .080}, kUnused}, true},
  {13, "T17", "JPEG compression",     {"quality", ""},     1, {Row{95, 92, 90, 87, 85, 82, 80, 77, 75, 72}, kUnused}, false},
  {14, "T18", "Gaussian blur",        {"sigma", ""},       1, {Row{.200, .222, .244, .267, .289, .311, .333, .356, .378, .400}, kUnused}, false},
  {15, "T19", "Lens blur",            {"r", ""},           1, {Row{1, 1, 1, 1, 1, 2, 2, 2, 2, 2}, kUnused}, false},
  {16, "T20", "Motion blur",          {"length", ""},      1, {Row{3, 3, 3, 3, 3, 4, 4, 4, 4, 4}, kUnused}, false},
  {17, "T22", "Tilt-stretch",         {"sx", ""},          1, {Row{.970, .968, .966, .963, .961, .959, .957, .954, .952, .950}, kUnused}, false},
  {18, "T23", "Vignette",             {"strength", ""},    1, {Row{.080, .091, .102, .113, .124, .136, .147, .158, .169, .180}, kUnused}, false},
  {19, "T24", "Contrast compression", {"alpha", ""},       1, {Row{.940, .933, .927, .920, .913, .907, .900, .893, .887, .880}, kUnused}, false},
  {20, "T25", "Non-uniform blur",     {"sigma_lo", "sigma_hi"}, 2, {Row{.2, .3, .3, .4, .5, .5, .6, .7, .7, .8}, Row{.4, .6, .9, 1.1, 1.3, 1.6, 1.8, 2.0, 2.3, 2.5}}, false},
}};
// clang-format on

std::size_t clamp_index(long long v, std::size_t n) {
  if (v < 0) return 0;
  if (v >= static_cast<long long>(n)) return n - 1;
  return static_cast<std::size_t>(v);
}

void require_size(const ImageBuffer& img, std::size_t min_side, const char* what) {
  if (img.height() < min_side || img.width() < min_side) {
    throw InputError(std::string(what) + " needs an image of at least " + std::to_string(min_side) +
                     "x" + std::to_string(min_side) + " pixels, got " + std::to_string(img.height()) +
                     "x" + std::to_string(img.width()));
  }
}

template <typename F>
ImageBuffer map_values(const ImageBuffer& img, F f) {
  ImageBuffer out = img;
  for (auto& v : out.data()) v = static_cast<float>(f(static_cast<double>(v)));
  return out;
}

ImageBuffer gaussian_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  ImageBuffer out = img;
  for (auto& v : out.data()) v = static_cast<float>(v + sigma * noise(rng));
  return out;
}

ImageBuffer multiplicative_noise(const ImageBuffer& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  ImageBuffer out = img;
  for (auto& v : out.data()) v = static_cast<float>(v * (1.0 + sigma * noise(rng)));
  return out;
}

// Each output pixel copies a source pixel displaced by up to amp pixels
// along each axis (rounded to the pixel grid, clamped at the border).
ImageBuffer jitter(const ImageBuffer& img, double amp, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> offset(-amp, amp);
  ImageBuffer out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const auto dy = std::llround(offset(rng));
      const auto dx = std::llround(offset(rng));
      const std::size_t sy = clamp_index(static_cast<long long>(y) + dy, img.height());
      const std::size_t sx = clamp_index(static_cast<long long>(x) + dx, img.width());
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

// n patches of ps x ps copied from random source locations of the original
// image to random destinations.
ImageBuffer patches(const ImageBuffer& img, std::size_t ps, std::size_t count, std::uint64_t seed) {
  require_size(img, ps, "patches");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_y(0, img.height() - ps);
  std::uniform_int_distribution<std::size_t> pick_x(0, img.width() - ps);
  ImageBuffer out = img;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t sy = pick_y(rng), sx = pick_x(rng);
    const std::size_t dy = pick_y(rng), dx = pick_x(rng);
    for (std::size_t y = 0; y < ps; ++y) {
      for (std::size_t x = 0; x < ps; ++x) {
        for (std::size_t c = 0; c < 3; ++c) out.at(dy + y, dx + x, c) = img.at(sy + y, sx + x, c);
      }
    }
  }
  return out;
}

// Block average over factor x factor tiles, replicated back to full size.
ImageBuffer pixelate(const ImageBuffer& img, std::size_t factor) {
  require_size(img, factor, "pixelate");
  ImageBuffer out(img.height(), img.width());
  for (std::size_t by = 0; by < img.height(); by += factor) {
    for (std::size_t bx = 0; bx < img.width(); bx += factor) {
      const std::size_t ey = std::min(by + factor, img.height());
      const std::size_t ex = std::min(bx + factor, img.width());
      const double inv = 1.0 / static_cast<double>((ey - by) * (ex - bx));
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) acc += img.at(y, x, c);
        }
        const auto mean = static_cast<float>(acc * inv);
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) out.at(y, x, c) = mean;
        }
      }
    }
  }
  return out;
}

ImageBuffer quantize(const ImageBuffer& img, int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  return map_values(img, [levels](double v) {
    return std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
  });
}

ImageBuffer color_cast_cool(const ImageBuffer& img, double s) {
  ImageBuffer out = img;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      out.at(y, x, 0) = static_cast<float>(img.at(y, x, 0) - s);
      out.at(y, x, 2) = static_cast<float>(img.at(y, x, 2) + s);
    }
  }
  return out;
}

// Red moves right and blue moves left by `shift` pixels.
ImageBuffer chromatic_aberration(const ImageBuffer& img, long long shift) {
  ImageBuffer out = img;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const auto xi = static_cast<long long>(x);
      out.at(y, x, 0) = img.at(y, clamp_index(xi - shift, img.width()), 0);
      out.at(y, x, 2) = img.at(y, clamp_index(xi + shift, img.width()), 2);
    }
  }
  return out;
}

// Drops round(frac * H * W) random pixels and fills each from its nearest
// kept pixel (breadth-first over the 4-neighbourhood).
ImageBuffer sparse_sampling(const ImageBuffer& img, double frac, std::uint64_t seed) {
  const std::size_t h = img.height(), w = img.width();
  const std::size_t n = h * w;
  const auto drop = std::min<std::size_t>(static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))),
                                          n == 0 ? 0 : n - 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < drop; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::int64_t> source(n);
  std::iota(source.begin(), source.end(), 0);
  for (std::size_t i = 0; i < drop; ++i) source[order[i]] = -1;

  std::deque<std::size_t> queue;
  for (std::size_t p = 0; p < n; ++p) {
    if (source[p] >= 0) queue.push_back(p);
  }
  while (!queue.empty()) {
    const std::size_t p = queue.front();
    queue.pop_front();
    const std::size_t y = p / w, x = p % w;
    const std::size_t neighbours[4] = {y > 0 ? p - w : n, y + 1 < h ? p + w : n, x > 0 ? p - 1 : n,
                                       x + 1 < w ? p + 1 : n};
    for (std::size_t q : neighbours) {
      if (q < n && source[q] < 0) {
        source[q] = source[p];
        queue.push_back(q);
      }
    }
  }
  ImageBuffer out(h, w);
  for (std::size_t p = 0; p < n; ++p) {
    const auto s = static_cast<std::size_t>(source[p]);
    for (std::size_t c = 0; c < 3; ++c) out.at(p / w, p % w, c) = img.at(s / w, s % w, c);
  }
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
    taps[k + radius] = v;
    total += v;
  }
  for (auto& t : taps) t /= total;
  return taps;
}

ImageBuffer convolve_rows(const ImageBuffer& img, const std::vector<double>& taps, int first_offset) {
  ImageBuffer out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long long sx = static_cast<long long>(x) + first_offset + static_cast<long long>(k);
          acc += taps[k] * img.at(y, clamp_index(sx, img.width()), c);
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ImageBuffer convolve_cols(const ImageBuffer& img, const std::vector<double>& taps, int first_offset) {
  ImageBuffer out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long long sy = static_cast<long long>(y) + first_offset + static_cast<long long>(k);
          acc += taps[k] * img.at(clamp_index(sy, img.height()), x, c);
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

// Uniform disk of radius r (offsets with dx^2 + dy^2 <= r^2).
ImageBuffer lens_blur(const ImageBuffer& img, int r) {
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= r * r) offsets.emplace_back(dy, dx);
    }
  }
  const double inv = 1.0 / static_cast<double>(offsets.size());
  ImageBuffer out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (const auto& [dy, dx] : offsets) {
          acc += img.at(clamp_index(static_cast<long long>(y) + dy, img.height()),
                        clamp_index(static_cast<long long>(x) + dx, img.width()), c);
        }
        out.at(y, x, c) = static_cast<float>(acc * inv);
      }
    }
  }
  return out;
}

// Horizontal box of `length` taps covering offsets -length/2 .. length - 1 - length/2.
ImageBuffer motion_blur(const ImageBuffer& img, int length) {
  const std::vector<double> taps(static_cast<std::size_t>(length), 1.0 / length);
  return convolve_rows(img, taps, -(length / 2));
}

// Horizontal scaling by sx about the image centre; the resampled image is
// cropped or edge-padded back to the original width.
ImageBuffer tilt_stretch(const ImageBuffer& img, double sx) {
  const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
  const double max_x = static_cast<double>(img.width() - 1);
  ImageBuffer out(img.height(), img.width());
  for (std::size_t x = 0; x < img.width(); ++x) {
    const double src = std::clamp(cx + (static_cast<double>(x) - cx) / sx, 0.0, max_x);
    const auto x0 = static_cast<std::size_t>(src);
    const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
    const double t = src - static_cast<double>(x0);
    for (std::size_t y = 0; y < img.height(); ++y) {
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>((1.0 - t) * img.at(y, x0, c) + t * img.at(y, x1, c));
      }
    }
  }
  return out;
}

// Radial gain 1 - strength * (r / r_max)^2, r_max being the centre-to-corner
// pixel distance; the centre keeps gain 1 and the corners get 1 - strength.
ImageBuffer vignette(const ImageBuffer& img, double strength) {
  const double cy = (static_cast<double>(img.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
  const double r2_max = cx * cx + cy * cy;
  ImageBuffer out = img;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double gain = r2_max > 0.0 ? 1.0 - strength * (dx * dx + dy * dy) / r2_max : 1.0;
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(img.at(y, x, c) * gain);
    }
  }
  return out;
}

// Per-pixel Gaussian whose sigma ramps linearly from sigma_lo at the left
// column to sigma_hi at the right column. Every output pixel uses a
// separable 2-D Gaussian of its own column's sigma.
ImageBuffer nonuniform_blur(const ImageBuffer& img, double sigma_lo, double sigma_hi) {
  const std::size_t h = img.height(), w = img.width();
  ImageBuffer out(h, w);
  std::vector<double> column(h * 3);
  for (std::size_t x = 0; x < w; ++x) {
    const double t = w > 1 ? static_cast<double>(x) / static_cast<double>(w - 1) : 0.0;
    const double sigma = sigma_lo + (sigma_hi - sigma_lo) * t;
    if (!(sigma > 0.0)) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
      }
      continue;
    }
    const auto taps = gaussian_taps(sigma);
    const long long radius = static_cast<long long>(taps.size() / 2);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long long sx = static_cast<long long>(x) - radius + static_cast<long long>(k);
          acc += taps[k] * img.at(y, clamp_index(sx, w), c);
        }
        column[y * 3 + c] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const long long sy = static_cast<long long>(y) - radius + static_cast<long long>(k);
          acc += taps[k] * column[clamp_index(sy, h) * 3 + c];
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

ImageBuffer jpeg(const ImageBuffer& img, int quality) { return decode_jpeg(encode_jpeg(img, quality)); }

void check_level(int type_id, int level) {
  if (type_id < 1 || type_id > kDegradationTypes) {
    throw InputError("degradation type must be in 1..20, got " + std::to_string(type_id));
  }
  if (level < 1 || level > kSeverityLevels) {
    throw InputError("severity level must be in 1..10, got " + std::to_string(level));
  }
}

}  // namespace

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const auto taps = gaussian_taps(sigma);
  const int first = -static_cast<int>(taps.size() / 2);
  return convolve_cols(convolve_rows(img, taps, first), taps, first);
}

const std::array<DegradationType, kDegradationTypes>& degradation_types() { return kTypes; }

const DegradationType& degradation_type(int type_id) {
  check_level(type_id, 1);
  return kTypes[static_cast<std::size_t>(type_id - 1)];
}

std::map<std::string, double> severity_params(int type_id, int level) {
  check_level(type_id, level);
  const auto& t = kTypes[static_cast<std::size_t>(type_id - 1)];
  std::map<std::string, double> out;
  for (int p = 0; p < t.param_count; ++p) {
    out.emplace(std::string(t.params[static_cast<std::size_t>(p)]),
                t.values[static_cast<std::size_t>(p)][static_cast<std::size_t>(level - 1)]);
  }
  return out;
}

DegradationSpec DegradationSpec::resolve(int type_id, int level) {
  DegradationSpec s;
  s.type_id = type_id;
  s.level = level;
  s.params = severity_params(type_id, level);
  s.kadid_tag = std::string(degradation_type(type_id).kadid_tag);
  return s;
}

double DegradationSpec::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) {
    throw InputError("degradation type " + std::to_string(type_id) + " is missing parameter '" + name + "'");
  }
  return it->second;
}

ImageBuffer degrade(const ImageBuffer& img, const DegradationSpec& spec, std::uint64_t seed) {
  if (img.empty()) throw InputError("cannot degrade an empty image");
  check_level(spec.type_id, spec.level);
  ImageBuffer out;
  switch (spec.type_id) {
    case 1: out = gaussian_noise(img, spec.param("sigma"), seed); break;
    case 2: out = multiplicative_noise(img, spec.param("sigma"), seed); break;
    case 3:
    case 4: {
      const double g = spec.param("gamma");
      out = map_values(img, [g](double v) { return std::pow(std::clamp(v, 0.0, 1.0), g); });
      break;
    }
    case 5: out = jitter(img, spec.param("amp"), seed); break;
    case 6:
      out = patches(img, static_cast<std::size_t>(spec.param("ps")), static_cast<std::size_t>(spec.param("n")), seed);
      break;
    case 7: out = pixelate(img, static_cast<std::size_t>(spec.param("factor"))); break;
    case 8: out = quantize(img, static_cast<int>(spec.param("bits"))); break;
    case 9: {
      const double a = spec.param("alpha");
      out = map_values(img, [a](double v) { return a + (1.0 - a) * v; });
      break;
    }
    case 10: out = color_cast_cool(img, spec.param("s")); break;
    case 11: out = chromatic_aberration(img, static_cast<long long>(spec.param("shift"))); break;
    case 12: out = sparse_sampling(img, spec.param("frac"), seed); break;
    case 13: out = jpeg(img, static_cast<int>(spec.param("quality"))); break;
    case 14: out = gaussian_blur(img, spec.param("sigma")); break;
    case 15: out = lens_blur(img, static_cast<int>(spec.param("r"))); break;
    case 16: out = motion_blur(img, static_cast<int>(spec.param("length"))); break;
    case 17: out = tilt_stretch(img, spec.param("sx")); break;
    case 18: out = vignette(img, spec.param("strength")); break;
    case 19: {
      const double a = spec.param("alpha");
      out = map_values(img, [a](double v) { return a * (v - 0.5) + 0.5; });
      break;
    }
    case 20: out = nonuniform_blur(img, spec.param("sigma_lo"), spec.param("sigma_hi")); break;
    default: throw InputError("unknown degradation type");
  }
  out.clamp();
  return out;
}

std::uint64_t cell_seed(std::uint64_t seed, int type_id, int level, std::size_t image_index) {
  std::uint64_t s = combine_seed(seed, static_cast<std::uint64_t>(type_id));
  s = combine_seed(s, static_cast<std::uint64_t>(level));
  return combine_seed(s, image_index);
}

std::vector<int> all_type_ids() {
  std::vector<int> ids(kDegradationTypes);
  std::iota(ids.begin(), ids.end(), 1);
  return ids;
}

std::vector<int> all_levels() {
  std::vector<int> levels(kSeverityLevels);
  std::iota(levels.begin(), levels.end(), 1);
  return levels;
}

DegradationMatrix build_degradation_matrix(std::span<const ImageBuffer> refs, std::uint64_t seed,
                                           std::span<const int> types, std::span<const int> levels,
                                           unsigned threads) {
  if (refs.empty()) throw InputError("degradation matrix needs at least one reference image");
  const std::vector<int> type_list = types.empty() ? all_type_ids() : std::vector<int>(types.begin(), types.end());
  const std::vector<int> level_list = levels.empty() ? all_levels() : std::vector<int>(levels.begin(), levels.end());

  std::vector<DegradationSpec> specs;
  for (int t : type_list) {
    for (int l : level_list) specs.push_back(DegradationSpec::resolve(t, l));
  }
  std::vector<std::vector<ImageBuffer>> cells(specs.size(), std::vector<ImageBuffer>(refs.size()));
  parallel_for(specs.size() * refs.size(), threads, [&](std::size_t job) {
    const std::size_t cell = job / refs.size();
    const std::size_t image = job % refs.size();
    const auto& spec = specs[cell];
    try {
      cells[cell][image] = degrade(refs[image], spec, cell_seed(seed, spec.type_id, spec.level, image));
    } catch (const Error& e) {
      throw InputError("degradation cell (type " + std::to_string(spec.type_id) + ", level " +
                       std::to_string(spec.level) + ", image " + std::to_string(image) + "): " + e.what());
    }
  });

  DegradationMatrix out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    out.emplace(CellKey{specs[i].type_id, specs[i].level}, std::move(cells[i]));
  }
  return out;
}

std::string degradation_dir_name(int type_id) {
  return std::to_string(type_id) + "_" + std::string(degradation_type(type_id).kadid_tag);
}

std::string severity_table_csv() {
  std::ostringstream os;
  os << "type_id,kadid_tag,name,level,param,value\n";
  for (const auto& t : kTypes) {
    for (int level = 1; level <= kSeverityLevels; ++level) {
      for (int p = 0; p < t.param_count; ++p) {
        os << t.id << ',' << t.kadid_tag << ',' << t.name << ',' << level << ','
           << t.params[static_cast<std::size_t>(p)] << ','
           << format_double(t.values[static_cast<std::size_t>(p)][static_cast<std::size_t>(level - 1)]) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace gmmd

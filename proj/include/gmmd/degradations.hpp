#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gmmd/image.hpp"

namespace gmmd {

inline constexpr int kDegradationTypes = 20;
inline constexpr int kSeverityLevels = 10;

struct DegradationType {
  int id;
  std::string_view kadid_tag;
  std::string_view name;
  // Parameter names in the order the tabulated values are stored.
  std::array<std::string_view, 2> params;
  int param_count;
  // Per-level values; the second row is only used by two-parameter types.
  std::array<std::array<double, kSeverityLevels>, 2> values;
  // Whether the operator consumes randomness.
  bool stochastic;
};

/// The 20 distortion types with their 10 tabulated severity levels.
const std::array<DegradationType, kDegradationTypes>& degradation_types();

const DegradationType& degradation_type(int type_id);

/// Tabulated parameter values for (type, level). Throws InputError when the
/// type is outside 1..20 or the level outside 1..10.
std::map<std::string, double> severity_params(int type_id, int level);

struct DegradationSpec {
  int type_id = 1;
  std::string kadid_tag;
  int level = 1;
  std::map<std::string, double> params;

  static DegradationSpec resolve(int type_id, int level);

  double param(const std::string& name) const;
};

/// Applies one distortion. The result has the input's size, values in
/// [0, 1], and depends only on (img, spec, seed).
ImageBuffer degrade(const ImageBuffer& img, const DegradationSpec& spec, std::uint64_t seed);

/// Separable Gaussian blur with edge replication; sigma <= 0 is the identity.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

/// Per-image seed of a degradation cell.
std::uint64_t cell_seed(std::uint64_t seed, int type_id, int level, std::size_t image_index);

using CellKey = std::pair<int, int>;  // (type id, level)
using DegradationMatrix = std::map<CellKey, std::vector<ImageBuffer>>;

/// Degrades every reference image for each (type, level) cell. Empty
/// `types` / `levels` select all of them.
DegradationMatrix build_degradation_matrix(std::span<const ImageBuffer> refs, std::uint64_t seed,
                                           std::span<const int> types = {},
                                           std::span<const int> levels = {},
                                           unsigned threads = 1);

/// All 200 cells as CSV: type_id,kadid_tag,name,level,param,value.
std::string severity_table_csv();

/// Directory name of a type in degradation trees, e.g. "13_T17".
std::string degradation_dir_name(int type_id);

std::vector<int> all_type_ids();
std::vector<int> all_levels();

}  // namespace gmmd

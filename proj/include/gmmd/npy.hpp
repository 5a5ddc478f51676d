#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gmmd {

/// A C-ordered numeric array read from or written to the NPY format.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::string descr;  // dtype as stored, "<f8" or "<f4"
  std::vector<double> data;
  /// Raw little-endian bytes of the data block as stored in the file.
  std::string raw;

  std::size_t row_bytes() const;
};

/// Writes a float64 array.
void write_npy(std::ostream& out, std::span<const std::size_t> shape, std::span<const double> data);
void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape, std::span<const double> data);

/// Reads float32/float64 little-endian C-order arrays; anything else raises
/// InputError.
NpyArray read_npy(std::istream& in);
NpyArray read_npy(const std::filesystem::path& path);

}  // namespace gmmd

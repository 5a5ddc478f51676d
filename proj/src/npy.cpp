#include "gmmd/npy.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <regex>

#include "gmmd/error.hpp"

namespace gmmd {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string shape_text(std::span<const std::size_t> shape) {
  std::string s = "(";
  for (std::size_t k = 0; k < shape.size(); ++k) {
    s += std::to_string(shape[k]);
    if (shape.size() == 1 || k + 1 < shape.size()) s += ",";
    if (k + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

std::size_t element_count(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

std::size_t NpyArray::row_bytes() const {
  if (shape.empty()) return raw.size();
  return shape[0] == 0 ? 0 : raw.size() / shape[0];
}

void write_npy(std::ostream& out, std::span<const std::size_t> shape, std::span<const double> data) {
  if (element_count(shape) != data.size()) throw InputError("NPY shape does not match the data length");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape_text(shape) + ", }";
  const std::size_t unpadded = 6 + 2 + 2 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape, std::span<const double> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_npy(out, shape, data);
  if (!out) throw InputError("failed writing " + path.string());
}

NpyArray read_npy(std::istream& in) {
  char magic[6];
  unsigned char version[2];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0) throw InputError("not an NPY array (bad magic)");
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  } else {
    throw InputError("unsupported NPY version " + std::to_string(version[0]));
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) throw InputError("truncated NPY header");

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  NpyArray arr;
  if (!std::regex_search(header, m, descr_re)) throw InputError("NPY header has no descr");
  arr.descr = m[1];
  if (!std::regex_search(header, m, order_re)) throw InputError("NPY header has no fortran_order");
  if (m[1] == "True") throw InputError("Fortran-ordered NPY arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw InputError("NPY header has no shape");
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it) {
    arr.shape.push_back(std::stoull(it->str()));
  }

  std::size_t width = 0;
  if (arr.descr == "<f8") {
    width = 8;
  } else if (arr.descr == "<f4") {
    width = 4;
  } else {
    throw InputError("unsupported NPY dtype '" + arr.descr + "' (expected <f8 or <f4)");
  }
  const std::size_t n = element_count(arr.shape);
  arr.raw.resize(n * width);
  if (!in.read(arr.raw.data(), static_cast<std::streamsize>(arr.raw.size()))) throw InputError("truncated NPY data");
  arr.data.resize(n);
  if (width == 8) {
    std::memcpy(arr.data.data(), arr.raw.data(), arr.raw.size());
  } else {
    std::vector<float> f(n);
    std::memcpy(f.data(), arr.raw.data(), arr.raw.size());
    std::copy(f.begin(), f.end(), arr.data.begin());
  }
  return arr;
}

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return read_npy(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace gmmd

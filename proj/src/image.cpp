#include "gmmd/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <png.h>

#include "gmmd/digest.hpp"
#include "gmmd/error.hpp"

namespace gmmd {

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), data_(height * width * kChannels, fill) {}

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height_ * width_ * kChannels) {
    throw InputError("image buffer size does not match " + std::to_string(height_) + "x" +
                     std::to_string(width_) + "x3");
  }
}

void ImageBuffer::clamp() {
  for (auto& v : data_) {
    if (!(v >= 0.0f)) v = 0.0f;  // also maps NaN to 0
    if (v > 1.0f) v = 1.0f;
  }
}

std::vector<std::uint8_t> to_rgb8(const ImageBuffer& img) {
  std::vector<std::uint8_t> out(img.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = std::clamp(img.data()[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

ImageBuffer from_rgb8(std::size_t height, std::size_t width, const std::uint8_t* rgb) {
  std::vector<float> data(height * width * ImageBuffer::kChannels);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(rgb[i]) / 255.0f;
  return ImageBuffer(height, width, std::move(data));
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageBuffer decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw InputError(std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    throw InputError(std::string("PNG decode failed: ") + image.message);
  }
  return from_rgb8(image.height, image.width, rgb.data());
}

}  // namespace

ImageBuffer decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> rgb;
  std::size_t height = 0, width = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw InputError(std::string("JPEG decode failed: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = cinfo.output_height;
  width = cinfo.output_width;
  rgb.resize(height * width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(height, width, rgb.data());
}

std::vector<std::uint8_t> encode_jpeg(const ImageBuffer& img, int quality) {
  if (img.empty()) throw InputError("cannot JPEG-encode an empty image");
  if (quality < 1 || quality > 100) throw InputError("JPEG quality must be in [1, 100]");
  const auto rgb = to_rgb8(img);
  jpeg_compress_struct cinfo{};
  JpegErrorManager jerr{};
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw InputError(std::string("JPEG encode failed: ") + jerr.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  cinfo.dct_method = JDCT_ISLOW;
  // 4:2:0: luma sampled 2x2, chroma 1x1.
  cinfo.comp_info[0].h_samp_factor = 2;
  cinfo.comp_info[0].v_samp_factor = 2;
  cinfo.comp_info[1].h_samp_factor = 1;
  cinfo.comp_info[1].v_samp_factor = 1;
  cinfo.comp_info[2].h_samp_factor = 1;
  cinfo.comp_info[2].v_samp_factor = 1;
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = img.width() * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes);
  }
  throw InputError("unsupported image format: " + path.string());
}

void save_png(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.empty()) throw InputError("cannot save an empty image");
  const auto rgb = to_rgb8(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error("PNG write failed for " + path.string() + ": " + image.message);
  }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<LabeledImage> load_image_dir(const std::filesystem::path& dir) {
  std::vector<LabeledImage> out;
  for (const auto& p : list_images(dir)) out.push_back({p.stem().string(), load_image(p)});
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, std::size_t height, std::size_t width) {
  if (img.empty() || height == 0 || width == 0) throw InputError("resize of an empty image");
  if (height == img.height() && width == img.width()) return img;
  ImageBuffer out(height, width);
  const bool box = img.height() % height == 0 && img.width() % width == 0;
  if (box) {
    const std::size_t fy = img.height() / height;
    const std::size_t fx = img.width() / width;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < fy; ++dy) {
            for (std::size_t dx = 0; dx < fx; ++dx) acc += img.at(y * fy + dy, x * fx + dx, c);
          }
          out.at(y, x, c) = static_cast<float>(acc * inv);
        }
      }
    }
    return out;
  }
  const double sy = static_cast<double>(img.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(width);
  const auto max_y = static_cast<double>(img.height() - 1);
  const auto max_x = static_cast<double>(img.width() - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(src_y);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = src_y - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(src_x);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = src_x - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bottom = (1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

std::string image_digest(const ImageBuffer& img) {
  std::vector<std::uint8_t> bytes(2 * sizeof(std::uint64_t) + img.data().size() * sizeof(float));
  const std::uint64_t dims[2] = {img.height(), img.width()};
  std::memcpy(bytes.data(), dims, sizeof dims);
  std::memcpy(bytes.data() + sizeof dims, img.data().data(), img.data().size() * sizeof(float));
  return sha256_hex(bytes);
}

}  // namespace gmmd

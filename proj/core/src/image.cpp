#include "tubenerf/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace tubenerf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Writes rows of `bit_depth`-bit samples with `color_type`.
void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;
  std::size_t row_bytes = 0;
};

PngData read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("corrupt PNG file " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_bit_depth(png, info) == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  PngData d;
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.channels = png_get_channels(png, info);
  d.bit_depth = png_get_bit_depth(png, info);
  d.row_bytes = png_get_rowbytes(png, info);
  d.bytes.resize(d.row_bytes * d.height);
  for (int y = 0; y < d.height; ++y) png_read_row(png, d.bytes.data() + y * d.row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0 || channels <= 0) throw std::invalid_argument("Image: non-positive size");
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image Image::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || x0 + w > width_ || y0 + h > height_) {
    throw std::out_of_range("Image::crop: window outside image");
  }
  Image out(w, h, channels_);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels_; ++c) out.at(x, y, c) = at(x0 + x, y0 + y, c);
    }
  }
  return out;
}

void write_png_rgb(const std::filesystem::path& path, const Image& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("write_png_rgb: expected 3 channels");
  std::vector<std::uint8_t> bytes(rgb.data().size());
  std::transform(rgb.data().begin(), rgb.data().end(), bytes.begin(), to_u8);
  write_png(path, rgb.width(), rgb.height(), 8, PNG_COLOR_TYPE_RGB, bytes,
            static_cast<std::size_t>(rgb.width()) * 3);
}

Image read_png_rgb(const std::filesystem::path& path) {
  const PngData d = read_png(path);
  if (d.bit_depth != 8 || (d.channels != 3 && d.channels != 4)) {
    throw std::runtime_error("read_png_rgb: expected 8-bit RGB in " + path.string());
  }
  Image img(d.width, d.height, 3);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = d.bytes[y * d.row_bytes + x * d.channels + c] / 255.0;
      }
    }
  }
  return img;
}

void write_png_mask(const std::filesystem::path& path, const Mask& mask, int width, int height) {
  std::vector<std::uint8_t> bytes(mask.size());
  std::transform(mask.begin(), mask.end(), bytes.begin(), [](std::uint8_t m) { return m ? 255 : 0; });
  write_png(path, width, height, 8, PNG_COLOR_TYPE_GRAY, bytes, static_cast<std::size_t>(width));
}

void write_png16_depth(const std::filesystem::path& path, const Image& depth, double scale) {
  std::vector<std::uint8_t> bytes(depth.pixel_count() * 2);
  for (std::size_t i = 0; i < depth.pixel_count(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::clamp(std::lround(depth.data()[i] / scale), 0L, 65535L));
    bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  write_png(path, depth.width(), depth.height(), 16, PNG_COLOR_TYPE_GRAY, bytes,
            static_cast<std::size_t>(depth.width()) * 2);
}

Image read_png16_depth(const std::filesystem::path& path, double scale) {
  const PngData d = read_png(path);
  if (d.bit_depth != 16 || d.channels != 1) {
    throw std::runtime_error("read_png16_depth: expected 16-bit grayscale in " + path.string());
  }
  Image img(d.width, d.height, 1);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      std::uint16_t v = 0;
      std::memcpy(&v, d.bytes.data() + y * d.row_bytes + 2 * x, 2);
      img.at(x, y) = v * scale;
    }
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const Image& depth) {
  if (depth.channels() != 1) throw std::invalid_argument("write_pfm: expected 1 channel");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "Pf\n" << depth.width() << " " << depth.height() << "\n-1.0\n";
  std::vector<std::uint32_t> row(depth.width());
  for (int y = depth.height() - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width(); ++x) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(depth.at(x, y)));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      row[x] = bits;
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  if (!in || magic != "Pf" || width <= 0 || height <= 0 || scale == 0.0) {
    throw std::runtime_error("corrupt PFM header in " + path.string());
  }
  const bool little = scale < 0.0;
  Image img(width, height, 1);
  std::vector<std::uint32_t> row(width);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
    if (!in) throw std::runtime_error("truncated PFM data in " + path.string());
    for (int x = 0; x < width; ++x) {
      std::uint32_t bits = row[x];
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      img.at(x, y) = std::bit_cast<float>(bits);
    }
  }
  return img;
}

Image quantize_8bit(const Image& rgb) {
  Image out = rgb;
  for (double& v : out.data()) v = to_u8(v) / 255.0;
  return out;
}

Image quantize_f32(const Image& depth) {
  Image out = depth;
  for (double& v : out.data()) v = static_cast<float>(v);
  return out;
}

}  // namespace tubenerf

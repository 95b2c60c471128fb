#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tubenerf {

/// Interleaved row-major image of doubles. RGB images hold values in [0, 1];
/// depth images hold z-depth in world units (0 marks "no value").
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Image& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }
  Image crop(int x0, int y0, int w, int h) const;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

using Mask = std::vector<std::uint8_t>;

/// 8-bit RGB PNG; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::filesystem::path& path, const Image& rgb);
Image read_png_rgb(const std::filesystem::path& path);
/// Grayscale 8-bit PNG of a mask (255 = valid).
void write_png_mask(const std::filesystem::path& path, const Mask& mask, int width, int height);
/// 16-bit grayscale PNG storing round(depth / scale).
void write_png16_depth(const std::filesystem::path& path, const Image& depth, double scale);
Image read_png16_depth(const std::filesystem::path& path, double scale);

/// Single-channel little-endian PFM ("Pf", scale -1). Rows are stored bottom-up as the format requires.
void write_pfm(const std::filesystem::path& path, const Image& depth);
Image read_pfm(const std::filesystem::path& path);

/// Round-trip through 8-bit quantization, matching what write_png_rgb stores.
Image quantize_8bit(const Image& rgb);
/// Round-trip through float32, matching what write_pfm stores.
Image quantize_f32(const Image& depth);

}  // namespace tubenerf

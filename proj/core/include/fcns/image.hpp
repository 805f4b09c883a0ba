#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fcns {

// 8-bit interleaved (HWC) raster. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Real-valued planar (CHW) array; used for resampled and normalized data.
struct Planar {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Planar() = default;
  Planar(int c, int h, int w, float fill = 0.0f);

  float& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height) * width;
  }
};

/// Gray images are replicated to three channels; RGB is copied.
Image to_rgb(const Image& image);

/// Converts to CHW float with the raw 0..255 pixel values.
Planar to_planar(const Image& image);

/// Bilinear resampling with half-pixel centres (corner alignment disabled):
/// the source coordinate of output pixel i is (i + 0.5) * in / out - 0.5,
/// clamped to [0, in - 1]; the two neighbouring samples are blended
/// linearly along each axis.
Planar resize_bilinear(const Planar& src, int out_height, int out_width);

/// Single-plane variant of resize_bilinear (row-major, height x width).
std::vector<float> resize_plane_bilinear(std::span<const float> src,
                                         int in_height, int in_width,
                                         int out_height, int out_width);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// Encodes to an in-memory PNG byte string.
std::vector<std::uint8_t> encode_png(const Image& image);

}  // namespace fcns

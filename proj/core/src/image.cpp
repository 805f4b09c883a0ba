#include "fcns/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fcns/error.hpp"

namespace fcns {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w),
      height(h),
      channels(c),
      pixels(static_cast<std::size_t>(w) * h * c, fill) {}

Planar::Planar(int c, int h, int w, float fill)
    : channels(c),
      height(h),
      width(w),
      values(static_cast<std::size_t>(c) * h * w, fill) {}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) {
    raise(ErrorKind::kShape, "expected 1 or 3 channels, got " +
                                 std::to_string(image.channels));
  }
  Image out(image.width, image.height, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] =
        image.pixels[i];
  }
  return out;
}

Planar to_planar(const Image& image) {
  Planar out(image.channels, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        out.at(c, y, x) = image.at(x, y, c);
      }
    }
  }
  return out;
}

namespace {

struct Tap {
  int lo;
  int hi;
  float frac;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> result(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in - 1);
    result[i] = {lo, hi, static_cast<float>(src - lo)};
  }
  return result;
}

void resample(const float* src, int in_h, int in_w, float* dst, int out_h,
              int out_w, const std::vector<Tap>& ty,
              const std::vector<Tap>& tx) {
  for (int y = 0; y < out_h; ++y) {
    const float* r0 = src + static_cast<std::size_t>(ty[y].lo) * in_w;
    const float* r1 = src + static_cast<std::size_t>(ty[y].hi) * in_w;
    const float fy = ty[y].frac;
    float* row = dst + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) {
      const auto& t = tx[x];
      const float top = r0[t.lo] + (r0[t.hi] - r0[t.lo]) * t.frac;
      const float bottom = r1[t.lo] + (r1[t.hi] - r1[t.lo]) * t.frac;
      row[x] = top + (bottom - top) * fy;
    }
  }
  (void)in_h;
}

}  // namespace

Planar resize_bilinear(const Planar& src, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1 || src.height < 1 || src.width < 1) {
    raise(ErrorKind::kShape, "resize requires non-empty source and target");
  }
  if (out_height == src.height && out_width == src.width) return src;
  Planar out(src.channels, out_height, out_width);
  const auto ty = taps(src.height, out_height);
  const auto tx = taps(src.width, out_width);
  for (int c = 0; c < src.channels; ++c) {
    resample(src.values.data() + c * src.plane_size(), src.height, src.width,
             out.values.data() + c * out.plane_size(), out_height, out_width,
             ty, tx);
  }
  return out;
}

std::vector<float> resize_plane_bilinear(std::span<const float> src,
                                         int in_height, int in_width,
                                         int out_height, int out_width) {
  if (src.size() != static_cast<std::size_t>(in_height) * in_width) {
    raise(ErrorKind::kShape, "plane size does not match dimensions");
  }
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width);
  resample(src.data(), in_height, in_width, out.data(), out_height, out_width,
           taps(in_height, out_height), taps(in_width, out_width));
  return out;
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    raise(ErrorKind::kIo, "cannot read PNG " + path.string() + ": " +
                              png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image image(static_cast<int>(png.width), static_cast<int>(png.height),
              gray ? 1 : 3);
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    raise(ErrorKind::kIo, "cannot decode PNG " + path.string() + ": " +
                              message);
  }
  return image;
}

namespace {

png_image describe(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    raise(ErrorKind::kShape, "PNG output needs 1 or 3 channels");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  return png;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  png_image png = describe(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(),
                                 0, nullptr)) {
    raise(ErrorKind::kIo, std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> bytes(size);
  if (!png_image_write_to_memory(&png, bytes.data(), &size, 0,
                                 image.pixels.data(), 0, nullptr)) {
    raise(ErrorKind::kIo, std::string("PNG encode failed: ") + png.message);
  }
  bytes.resize(size);
  return bytes;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::kIo, "cannot write " + path.string());
}

}  // namespace fcns

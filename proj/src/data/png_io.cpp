#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "harmony/data.hpp"

namespace harmony::data {

namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

std::vector<unsigned char> decode(const fs::path& file, png_uint_32 format,
                                  int& width, int& height) {
  PngImage p;
  if (!png_image_begin_read_from_file(&p.image, file.c_str()))
    throw IoError("cannot read PNG '" + file.string() + "': " + p.image.message);
  p.image.format = format;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(p.image));
  if (!png_image_finish_read(&p.image, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG '" + file.string() + "': " + p.image.message);
  width = static_cast<int>(p.image.width);
  height = static_cast<int>(p.image.height);
  return buf;
}

}  // namespace

Tensor read_png_rgb(const fs::path& file) {
  int w = 0, h = 0;
  auto buf = decode(file, PNG_FORMAT_RGB, w, h);
  Tensor t(Shape{1, 3, h, w});
  const std::size_t plane = t.shape().plane();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) t[c * plane + i] = buf[3 * i + c];
  return t;
}

Tensor read_png_mask(const fs::path& file) {
  int w = 0, h = 0;
  auto buf = decode(file, PNG_FORMAT_GRAY, w, h);
  Tensor t(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) t[i] = buf[i] >= 128 ? 1.0 : 0.0;
  return t;
}

std::pair<int, int> png_size(const fs::path& file) {
  PngImage p;
  if (!png_image_begin_read_from_file(&p.image, file.c_str()))
    throw IoError("cannot read PNG '" + file.string() + "': " + p.image.message);
  return {static_cast<int>(p.image.width), static_cast<int>(p.image.height)};
}

void write_png(const fs::path& file, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3))
    throw DimensionError("c", "write_png expects (1, 1|3, H, W), got " + s.str());
  const std::size_t plane = s.plane();
  std::vector<unsigned char> buf(plane * s.c);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < s.c; ++c) {
      Real v = std::clamp(image[c * plane + i], Real(0), Real(255));
      buf[s.c * i + c] = static_cast<unsigned char>(std::lround(v));
    }
  std::error_code ec;
  if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
  PngImage p;
  p.image.width = static_cast<png_uint_32>(s.w);
  p.image.height = static_cast<png_uint_32>(s.h);
  p.image.format = s.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&p.image, file.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + file.string() + "': " + p.image.message);
}

Tensor mask_to_pixels(const Tensor& mask) {
  Tensor t = mask;
  for (Real& v : t.data()) v = v >= 0.5 ? 255.0 : 0.0;
  return t;
}

}  // namespace harmony::data

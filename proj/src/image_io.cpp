#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "defectvit/errors.hpp"
#include "defectvit/image.hpp"

namespace defectvit {

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read image " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode image " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < buf.size(); ++i) out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw ContractError("write_png: empty image for " + path.string());
  std::vector<std::uint8_t> buf(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buf.begin(), to_byte);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write image " + path.string() + ": " + img.message);
  }
}

std::vector<unsigned char> encode_png(const Image& image) {
  if (image.empty()) throw ContractError("encode_png: empty image");
  std::vector<std::uint8_t> buf(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), buf.begin(), to_byte);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, buf.data(), 0, nullptr)) {
    throw IoError(std::string("cannot encode image: ") + img.message);
  }
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, buf.data(), 0, nullptr)) {
    throw IoError(std::string("cannot encode image: ") + img.message);
  }
  out.resize(size);
  return out;
}

void quantize_8bit(Image& image) {
  for (auto& v : image.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
}

}  // namespace defectvit

#pragma once

#include <filesystem>
#include <vector>

namespace defectvit {

// Grayscale image, row-major, intensities in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

// 8-bit grayscale PNG. Reading converts palette, RGB and 16-bit inputs to
// 8-bit gray; values become k / 255. Throws IoError naming the path.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<unsigned char> encode_png(const Image& image);

// Rounds every pixel to the nearest k / 255 after clamping to [0, 1], so a
// PNG roundtrip is exact.
void quantize_8bit(Image& image);

}  // namespace defectvit

#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace jmatch {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit grayscale image stored as floats in [0, 255], row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

  bool empty() const { return width == 0 || height == 0; }
  float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }

  /// Bilinear lookup; points outside the image read as 0.
  float sample(double x, double y) const;
};

/// Binary P5 with maxval <= 255. Anything else (P2, P6, 16-bit) is rejected.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Centre crop (or zero pad) to the requested size.
GrayImage center_crop(const GrayImage& image, std::size_t width, std::size_t height);

}  // namespace jmatch

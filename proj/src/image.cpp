#include "jmatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace jmatch {

float GrayImage::sample(double x, double y) const {
  if (empty()) return 0.0f;
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const auto x0 = static_cast<long long>(fx), y0 = static_cast<long long>(fy);
  auto px = [&](long long xx, long long yy) -> double {
    if (xx < 0 || yy < 0 || xx >= static_cast<long long>(width) || yy >= static_cast<long long>(height)) return 0.0;
    return pixels[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)];
  };
  const double top = px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax;
  const double bottom = px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax;
  return static_cast<float>(top * (1 - ay) + bottom * ay);
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is) {
  std::string tok;
  char ch = 0;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open image " + path.string());
  const std::string magic = header_token(is);
  if (magic == "P6" || magic == "P3") throw ImageError(path.string() + ": color images are not supported, convert to 8-bit grayscale P5");
  if (magic != "P5") throw ImageError(path.string() + ": not a binary PGM (P5) file");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(header_token(is));
    h = std::stoul(header_token(is));
    maxval = std::stoul(header_token(is));
  } catch (const std::exception&) {
    throw ImageError(path.string() + ": malformed PGM header");
  }
  if (maxval == 0 || maxval > 255) throw ImageError(path.string() + ": only 8-bit PGM is supported");
  GrayImage img(w, h);
  std::vector<unsigned char> raw(w * h);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ImageError(path.string() + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) * (255.0f / maxval);
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageError("cannot write image " + path.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::clamp(std::lround(image.pixels[i]), 0L, 255L));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

GrayImage center_crop(const GrayImage& image, std::size_t width, std::size_t height) {
  GrayImage out(width, height);
  const auto ox = (static_cast<long long>(image.width) - static_cast<long long>(width)) / 2;
  const auto oy = (static_cast<long long>(image.height) - static_cast<long long>(height)) / 2;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const long long sx = static_cast<long long>(x) + ox, sy = static_cast<long long>(y) + oy;
      if (sx >= 0 && sy >= 0 && sx < static_cast<long long>(image.width) && sy < static_cast<long long>(image.height)) {
        out.at(x, y) = image.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
      }
    }
  return out;
}

}  // namespace jmatch

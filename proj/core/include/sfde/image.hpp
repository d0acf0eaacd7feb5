#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sfde::image {

/// Interleaved pixels scaled to [0, 1]; channels is 1 (gray) or 3 (RGB).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Binary PGM (P5) or PPM (P6). Malformed input raises FormatError naming
/// `source` and the byte offset.
Image decode_pnm(std::string_view bytes, const std::string& source);
Image read_pnm(const std::filesystem::path& path);
/// P6 for 3 channels, P5 for 1, maxval 255.
std::string encode_pnm(const Image& img);
void write_pnm(const std::filesystem::path& path, const Image& img);

Image resize_bilinear(const Image& img, std::size_t width, std::size_t height);
Image flip_horizontal(const Image& img);

/// Planar 3 x H x W copy; gray images are replicated across channels.
std::vector<float> to_planar_rgb(const Image& img);

}  // namespace sfde::image

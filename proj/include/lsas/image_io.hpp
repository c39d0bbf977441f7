#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lsas {

/// Interleaved 8-bit image (row-major, channels innermost).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  [[nodiscard]] std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Reads PNG (gray, gray+alpha, RGB, RGBA, palette) into 1 or 3 channels.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Reads baseline/progressive JPEG into 3 channels (gray JPEGs are expanded).
Image8 read_jpeg(const std::filesystem::path& path);

/// Dispatches on extension (.png / .jpg / .jpeg, case-insensitive).
Image8 read_image(const std::filesystem::path& path);

}  // namespace lsas

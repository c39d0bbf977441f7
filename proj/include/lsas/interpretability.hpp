#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lsas/backbone.hpp"
#include "lsas/image_io.hpp"

namespace lsas {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  [[nodiscard]] std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  [[nodiscard]] bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Binarized top-quantile region of a heatmap.
struct RegionMask : BinaryMask {
  double fraction = 0.0;  // selected-pixel share
};

/// Spatial attribution map normalized to [0, 1].
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::string source_layer;
  int target_class = -1;
};

/// Bilinear resize with half-pixel centers (align_corners = false).
std::vector<double> resize_bilinear(std::span<const double> src, int height, int width, int out_height,
                                    int out_width);

/// Min-max normalization into [0, 1]. A map without spread maps to all ones if
/// positive and to all zeros otherwise.
void normalize_unit_range(std::span<double> values);

/// Grad-CAM at `layer` for one image (C, H, W). Channel weights are the spatial
/// mean of d score / d activation; the map is ReLU(sum_k w_k A_k), upsampled to
/// the image size and min-max normalized. Runs in Eval mode and leaves the
/// model's parameter gradients zeroed.
template <class T>
Heatmap gradcam(Model<T>& model, const Tensor<T>& image, int target_class, const std::string& layer);

/// Pixels at or above the (1 - fraction) empirical quantile. Ties at the
/// threshold are included, so the mask may exceed the nominal fraction.
RegionMask focused_region(const Heatmap& heatmap, double fraction = 0.2);
RegionMask focused_region(std::span<const double> values, int height, int width, double fraction = 0.2);

/// `{split}_{index}_{class}.png`
std::string heatmap_filename(const std::string& split, std::size_t index, int target_class);

/// 8-bit grayscale export.
void write_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap);
/// Jet-colored heatmap alpha-blended over the image (must share dimensions).
void write_overlay_png(const std::filesystem::path& path, const Heatmap& heatmap, const Image8& image,
                       double alpha = 0.5);

/// Reads an 8-bit grayscale heatmap back into [0, 1].
Heatmap read_heatmap_png(const std::filesystem::path& path);

}  // namespace lsas

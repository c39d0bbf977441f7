#include "lsas/interpretability.hpp"

#include <algorithm>
#include <cmath>

namespace lsas {

std::vector<double> resize_bilinear(std::span<const double> src, int height, int width, int out_height,
                                    int out_width) {
  if (height <= 0 || width <= 0 || out_height <= 0 || out_width <= 0 ||
      src.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidArgument("resize_bilinear: bad dimensions");
  }
  std::vector<double> out(static_cast<std::size_t>(out_height) * out_width);
  const double sy = static_cast<double>(height) / out_height;
  const double sx = static_cast<double>(width) / out_width;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, width - 1);
      const double wx = fx - x0;
      const auto at = [&](int r, int c) { return src[static_cast<std::size_t>(r) * width + c]; };
      const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
      const double bottom = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
      out[static_cast<std::size_t>(y) * out_width + x] = top * (1 - wy) + bottom * wy;
    }
  }
  return out;
}

void normalize_unit_range(std::span<double> values) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo > 0.0) {
    for (auto& v : values) v = (v - lo) / (hi - lo);
  } else {
    std::fill(values.begin(), values.end(), hi > 0.0 ? 1.0 : 0.0);
  }
}

template <class T>
Heatmap gradcam(Model<T>& model, const Tensor<T>& image, int target_class, const std::string& layer) {
  Tensor<T> x = image;
  if (x.rank() == 3) x.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  if (x.rank() != 4 || x.dim(0) != 1) throw InvalidArgument("gradcam: expected a single (C, H, W) image");
  const int img_h = x.dim(2), img_w = x.dim(3);

  const std::size_t index = model.layer_index(layer);
  const std::size_t last = model.layer_count();
  if (index + 1 >= last) throw InvalidArgument("gradcam: layer '" + layer + "' has no downstream classifier");

  const Tensor<T> activation = model.forward_range(x, 0, index + 1, Mode::Eval);
  if (activation.rank() != 4) {
    throw InvalidArgument("gradcam: layer '" + layer + "' does not produce a feature map");
  }
  const Tensor<T> logits = model.forward_range(activation, index + 1, last, Mode::Eval);
  const int classes = logits.dim(1);
  if (target_class < 0 || target_class >= classes) {
    throw InvalidArgument("gradcam: target class " + std::to_string(target_class) + " outside [0, " +
                          std::to_string(classes) + ")");
  }
  Tensor<T> seed({1, classes});
  seed[static_cast<std::size_t>(target_class)] = T(1);
  const Tensor<T> grad = model.backward_range(seed, index + 1, last);
  model.zero_grad();

  const int channels = activation.dim(1), fh = activation.dim(2), fw = activation.dim(3);
  const std::size_t hw = static_cast<std::size_t>(fh) * fw;
  std::vector<double> cam(hw, 0.0);
  for (int k = 0; k < channels; ++k) {
    const T* g = grad.data() + static_cast<std::size_t>(k) * hw;
    const T* a = activation.data() + static_cast<std::size_t>(k) * hw;
    double weight = 0.0;
    for (std::size_t j = 0; j < hw; ++j) weight += g[j];
    weight /= static_cast<double>(hw);
    for (std::size_t j = 0; j < hw; ++j) cam[j] += weight * a[j];
  }
  for (auto& v : cam) v = std::max(v, 0.0);

  Heatmap h;
  h.height = img_h;
  h.width = img_w;
  h.values = resize_bilinear(cam, fh, fw, img_h, img_w);
  normalize_unit_range(h.values);
  h.source_layer = layer;
  h.target_class = target_class;
  return h;
}

RegionMask focused_region(std::span<const double> values, int height, int width, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("focused_region: fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t total = values.size();
  if (total == 0 || total != static_cast<std::size_t>(height) * width) {
    throw InvalidArgument("focused_region: value count does not match dimensions");
  }
  // Number of pixels the nominal fraction asks for; the small slack keeps
  // 0.2 * 10 from rounding up to 3.
  std::size_t k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, total);
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(total - k), sorted.end());
  const double threshold = sorted[total - k];

  RegionMask m;
  m.height = height;
  m.width = width;
  m.bits.resize(total);
  std::size_t selected = 0;
  for (std::size_t i = 0; i < total; ++i) {
    m.bits[i] = values[i] >= threshold;
    selected += m.bits[i];
  }
  m.fraction = static_cast<double>(selected) / static_cast<double>(total);
  return m;
}

RegionMask focused_region(const Heatmap& heatmap, double fraction) {
  return focused_region(heatmap.values, heatmap.height, heatmap.width, fraction);
}

std::string heatmap_filename(const std::string& split, std::size_t index, int target_class) {
  return split + "_" + std::to_string(index) + "_" + std::to_string(target_class) + ".png";
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Piecewise-linear jet colormap.
void jet(double v, double rgb[3]) {
  v = std::clamp(v, 0.0, 1.0);
  const auto ramp = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  rgb[0] = ramp(4.0 * v - 3.0);
  rgb[1] = ramp(4.0 * v - 2.0);
  rgb[2] = ramp(4.0 * v - 1.0);
}

}  // namespace

void write_heatmap_png(const std::filesystem::path& path, const Heatmap& heatmap) {
  Image8 img;
  img.width = heatmap.width;
  img.height = heatmap.height;
  img.channels = 1;
  img.pixels.resize(heatmap.values.size());
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) img.pixels[i] = to_byte(heatmap.values[i]);
  write_png(path, img);
}

void write_overlay_png(const std::filesystem::path& path, const Heatmap& heatmap, const Image8& image, double alpha) {
  if (image.width != heatmap.width || image.height != heatmap.height) {
    throw InvalidArgument("write_overlay_png: heatmap and image dimensions differ");
  }
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * out.width + x;
      double rgb[3];
      jet(heatmap.values[i], rgb);
      for (int c = 0; c < 3; ++c) {
        const double base = image.at(y, x, image.channels == 3 ? c : 0) / 255.0;
        out.pixels[i * 3 + c] = to_byte((1.0 - alpha) * base + alpha * rgb[c]);
      }
    }
  }
  write_png(path, out);
}

Heatmap read_heatmap_png(const std::filesystem::path& path) {
  const Image8 img = read_png(path);
  Heatmap h;
  h.height = img.height;
  h.width = img.width;
  h.values.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) h.values[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x) / 255.0;
  }
  return h;
}

template Heatmap gradcam<float>(Model<float>&, const Tensor<float>&, int, const std::string&);
template Heatmap gradcam<double>(Model<double>&, const Tensor<double>&, int, const std::string&);

}  // namespace lsas

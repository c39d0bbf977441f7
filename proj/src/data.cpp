#include "lsas/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "lsas/errors.hpp"
#include "lsas/image_io.hpp"
#include "lsas/interpretability.hpp"

namespace lsas {

namespace fs = std::filesystem;

InMemoryDataset::InMemoryDataset(std::string name, int channels, int height, int width, int num_classes)
    : name_(std::move(name)), channels_(channels), height_(height), width_(width), num_classes_(num_classes) {}

void InMemoryDataset::add(const std::uint8_t* pixels, int label) {
  if (label < 0 || label >= num_classes_) {
    throw DataError(name_ + ": label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes_) + ")");
  }
  const std::size_t n = static_cast<std::size_t>(channels_) * height_ * width_;
  pixels_.insert(pixels_.end(), pixels, pixels + n);
  labels_.push_back(label);
}

Sample InMemoryDataset::get(std::size_t index) const {
  if (index >= labels_.size()) throw InvalidArgument(name_ + ": sample index out of range");
  const std::size_t n = static_cast<std::size_t>(channels_) * height_ * width_;
  Sample s{channels_, height_, width_, {}, labels_[index]};
  s.pixels.assign(pixels_.begin() + static_cast<std::ptrdiff_t>(index * n),
                  pixels_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return s;
}

ImageFolderDataset::ImageFolderDataset(const fs::path& root, int resize, int crop) : resize_(resize), crop_(crop) {
  if (!fs::is_directory(root)) throw DataError("image folder '" + root.string() + "' does not exist");
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes_.push_back(entry.path().filename().string());
  }
  std::sort(classes_.begin(), classes_.end());
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / classes_[c])) {
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
      if (entry.is_regular_file() && (ext == ".jpg" || ext == ".jpeg" || ext == ".png")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) files_.emplace_back(std::move(f), static_cast<int>(c));
  }
  if (files_.empty()) throw DataError("image folder '" + root.string() + "' contains no images");
}

Sample ImageFolderDataset::get(std::size_t index) const {
  const auto& [path, label] = files_.at(index);
  const Image8 img = read_image(path);
  const double scale = static_cast<double>(resize_) / std::min(img.width, img.height);
  const int rw = std::max(crop_, static_cast<int>(std::lround(img.width * scale)));
  const int rh = std::max(crop_, static_cast<int>(std::lround(img.height * scale)));
  const int y0 = (rh - crop_) / 2, x0 = (rw - crop_) / 2;
  Sample s{3, crop_, crop_, {}, label};
  s.pixels.resize(static_cast<std::size_t>(3) * crop_ * crop_);
  std::vector<double> plane(static_cast<std::size_t>(img.width) * img.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        plane[static_cast<std::size_t>(y) * img.width + x] = img.at(y, x, img.channels == 3 ? c : 0);
      }
    }
    const auto resized = resize_bilinear(plane, img.height, img.width, rh, rw);
    for (int y = 0; y < crop_; ++y) {
      for (int x = 0; x < crop_; ++x) {
        const double v = resized[static_cast<std::size_t>(y + y0) * rw + (x + x0)];
        s.pixels[(static_cast<std::size_t>(c) * crop_ + y) * crop_ + x] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return s;
}

SubsetDataset::SubsetDataset(const Dataset& base, std::vector<std::size_t> indices)
    : base_(base), indices_(std::move(indices)) {
  for (auto i : indices_) {
    if (i >= base.size()) throw InvalidArgument("subset index " + std::to_string(i) + " out of range");
  }
}

std::vector<std::size_t> balanced_subset(const Dataset& data, std::size_t count) {
  const auto classes = static_cast<std::size_t>(data.num_classes());
  const std::size_t quota = (count + classes - 1) / classes;
  std::vector<std::size_t> per_class(classes, 0), out;
  for (std::size_t i = 0; i < data.size() && out.size() < count; ++i) {
    const auto c = static_cast<std::size_t>(data.label(i));
    if (per_class[c] < quota) {
      ++per_class[c];
      out.push_back(i);
    }
  }
  return out;
}

DatasetSpec dataset_spec(const std::string& name) {
  DatasetSpec s;
  s.name = name;
  if (name == "cifar10") {
    s.norm = {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
  } else if (name == "cifar100") {
    s.num_classes = 100;
    s.norm = {{0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}};
  } else if (name == "stl10") {
    s.image_size = 96;
    s.pad = 12;
    s.norm = {{0.4467, 0.4398, 0.4066}, {0.2603, 0.2566, 0.2713}};
  } else if (name == "imagenet") {
    s.num_classes = 1000;
    s.image_size = 224;
    s.pad = 0;
    s.norm = {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
  } else if (name == "synthetic") {
    s.norm = {{0.3, 0.3, 0.3}, {0.25, 0.25, 0.25}};
  } else {
    throw ConfigError("unknown dataset '" + name + "' (expected cifar10, cifar100, stl10, imagenet or synthetic)");
  }
  return s;
}

fs::path data_root(const fs::path& root) {
  if (!root.empty()) return root;
  if (const char* env = std::getenv("LSAS_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data";
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_files(const std::vector<fs::path>& files, const std::string& dataset, const std::string& hint) {
  for (const auto& f : files) {
    if (!fs::exists(f)) {
      throw DataError(dataset + " not found: missing '" + f.string() + "'. " + hint +
                      " Set LSAS_DATA_DIR to the directory that contains it.");
    }
  }
}

}  // namespace

std::unique_ptr<InMemoryDataset> read_cifar10(const std::vector<fs::path>& files) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  auto ds = std::make_unique<InMemoryDataset>("cifar10", 3, 32, 32, 10);
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError("'" + f.string() + "' is not a CIFAR-10 binary batch (size " + std::to_string(bytes.size()) + ")");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) ds->add(bytes.data() + off + 1, bytes[off]);
  }
  return ds;
}

std::unique_ptr<InMemoryDataset> read_cifar100(const fs::path& file) {
  constexpr std::size_t kRecord = 2 + 3 * 32 * 32;
  auto ds = std::make_unique<InMemoryDataset>("cifar100", 3, 32, 32, 100);
  const auto bytes = read_file(file);
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw DataError("'" + file.string() + "' is not a CIFAR-100 binary file");
  }
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) ds->add(bytes.data() + off + 2, bytes[off + 1]);
  return ds;
}

std::unique_ptr<InMemoryDataset> read_stl10(const fs::path& images, const fs::path& labels) {
  constexpr int kSide = 96;
  constexpr std::size_t kImage = 3 * kSide * kSide;
  const auto pix = read_file(images);
  const auto lab = read_file(labels);
  if (pix.size() != lab.size() * kImage) {
    throw DataError("STL-10 image/label counts disagree in '" + images.string() + "'");
  }
  auto ds = std::make_unique<InMemoryDataset>("stl10", 3, kSide, kSide, 10);
  std::vector<std::uint8_t> planar(kImage);
  for (std::size_t i = 0; i < lab.size(); ++i) {
    const std::uint8_t* src = pix.data() + i * kImage;
    // Stored column-major within each channel.
    for (int c = 0; c < 3; ++c) {
      for (int x = 0; x < kSide; ++x) {
        for (int y = 0; y < kSide; ++y) {
          planar[(static_cast<std::size_t>(c) * kSide + y) * kSide + x] = src[(static_cast<std::size_t>(c) * kSide + x) * kSide + y];
        }
      }
    }
    if (lab[i] < 1) throw DataError("STL-10 labels are 1-based; found 0");
    ds->add(planar.data(), lab[i] - 1);
  }
  return ds;
}

DataSplits load_dataset(const std::string& name, const fs::path& root_arg) {
  DataSplits splits;
  splits.spec = dataset_spec(name);
  if (name == "synthetic") {
    auto s = synthetic_dataset({});
    s.spec = splits.spec;
    return s;
  }
  const fs::path root = data_root(root_arg);
  if (name == "cifar10") {
    const fs::path dir = root / "cifar-10-batches-bin";
    std::vector<fs::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    require_files(train, "CIFAR-10", "Download the binary version (cifar-10-binary.tar.gz) and extract it.");
    require_files({dir / "test_batch.bin"}, "CIFAR-10", "Download the binary version and extract it.");
    splits.train = read_cifar10(train);
    splits.test = read_cifar10({dir / "test_batch.bin"});
  } else if (name == "cifar100") {
    const fs::path dir = root / "cifar-100-binary";
    require_files({dir / "train.bin", dir / "test.bin"}, "CIFAR-100",
                  "Download the binary version (cifar-100-binary.tar.gz) and extract it.");
    splits.train = read_cifar100(dir / "train.bin");
    splits.test = read_cifar100(dir / "test.bin");
  } else if (name == "stl10") {
    const fs::path dir = root / "stl10_binary";
    require_files({dir / "train_X.bin", dir / "train_y.bin", dir / "test_X.bin", dir / "test_y.bin"}, "STL-10",
                  "Download stl10_binary.tar.gz and extract it.");
    splits.train = read_stl10(dir / "train_X.bin", dir / "train_y.bin");
    splits.test = read_stl10(dir / "test_X.bin", dir / "test_y.bin");
  } else if (name == "imagenet") {
    const fs::path dir = root / "imagenet";
    require_files({dir / "train", dir / "val"}, "ImageNet", "Arrange images as imagenet/{train,val}/<class>/<file>.");
    // Training samples keep a 256 window so the loader can random-crop 224.
    splits.train = std::make_unique<ImageFolderDataset>(dir / "train", 256, 256);
    splits.test = std::make_unique<ImageFolderDataset>(dir / "val", 256, 224);
  }
  return splits;
}

DataSplits synthetic_dataset(const SyntheticOptions& o) {
  static constexpr bool kHues[6][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}};
  if (o.num_classes < 2 || o.num_classes > 64) throw ConfigError("synthetic dataset: num_classes must be in [2, 64]");
  if (o.image_size < 8) throw ConfigError("synthetic dataset: image_size must be at least 8");
  const int side = o.image_size;
  auto make = [&](std::size_t count, std::uint64_t stream, const char* name) {
    auto ds = std::make_unique<InMemoryDataset>(name, 3, side, side, o.num_classes);
    Rng rng(o.seed * 0x9e3779b97f4a7c15ULL + stream);
    std::uniform_int_distribution<int> noise(0, 60);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(3) * side * side);
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(i % static_cast<std::size_t>(o.num_classes));
      // Class code: hue from the low bits, box size from the rest.
      const int hue = label % 6;
      const int box = side / 4 + (label / 6) * std::max(1, side / 8);
      const int b = std::min(box, side - 1);
      std::uniform_int_distribution<int> pos(0, side - b);
      const int y0 = pos(rng), x0 = pos(rng);
      for (int c = 0; c < 3; ++c) {
        const bool lit = kHues[hue][c];
        for (int y = 0; y < side; ++y) {
          for (int x = 0; x < side; ++x) {
            int v = noise(rng);
            if (y >= y0 && y < y0 + b && x >= x0 && x < x0 + b) v += lit ? 170 : 40;
            px[(static_cast<std::size_t>(c) * side + y) * side + x] = static_cast<std::uint8_t>(std::min(v, 255));
          }
        }
      }
      ds->add(px.data(), label);
    }
    return ds;
  };
  DataSplits s;
  s.spec = dataset_spec("synthetic");
  s.spec.num_classes = o.num_classes;
  s.spec.image_size = side;
  s.spec.pad = side / 8;
  s.train = make(o.train_size, 1, "synthetic");
  s.test = make(o.test_size, 2, "synthetic");
  return s;
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Sample augment(const Sample& s, int pad, int crop_height, int crop_width, Rng& rng) {
  if (pad < 0 || crop_height > s.height + 2 * pad || crop_width > s.width + 2 * pad) {
    throw InvalidArgument("augment: crop larger than padded image");
  }
  if (pad >= s.height || pad >= s.width) throw InvalidArgument("augment: reflect padding exceeds image size");
  std::uniform_int_distribution<int> dy(0, s.height + 2 * pad - crop_height), dx(0, s.width + 2 * pad - crop_width);
  const int oy = dy(rng) - pad, ox = dx(rng) - pad;
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  Sample out{s.channels, crop_height, crop_width, {}, s.label};
  out.pixels.resize(static_cast<std::size_t>(s.channels) * crop_height * crop_width);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < crop_height; ++y) {
      const int sy = reflect(oy + y, s.height);
      for (int x = 0; x < crop_width; ++x) {
        const int sx = reflect(ox + (flip ? crop_width - 1 - x : x), s.width);
        out.pixels[(static_cast<std::size_t>(c) * crop_height + y) * crop_width + x] =
            s.pixels[(static_cast<std::size_t>(c) * s.height + sy) * s.width + sx];
      }
    }
  }
  return out;
}

Sample center_crop(const Sample& s, int crop_height, int crop_width) {
  if (crop_height > s.height || crop_width > s.width) throw InvalidArgument("center_crop: crop larger than image");
  const int oy = (s.height - crop_height) / 2, ox = (s.width - crop_width) / 2;
  Sample out{s.channels, crop_height, crop_width, {}, s.label};
  out.pixels.resize(static_cast<std::size_t>(s.channels) * crop_height * crop_width);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < crop_height; ++y) {
      for (int x = 0; x < crop_width; ++x) {
        out.pixels[(static_cast<std::size_t>(c) * crop_height + y) * crop_width + x] =
            s.pixels[(static_cast<std::size_t>(c) * s.height + y + oy) * s.width + x + ox];
      }
    }
  }
  return out;
}

template <class T>
void write_normalized(const Sample& s, const Normalization& norm, T* out) {
  const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
  for (int c = 0; c < s.channels; ++c) {
    const double m = norm.mean[static_cast<std::size_t>(c % 3)], sd = norm.std[static_cast<std::size_t>(c % 3)];
    for (std::size_t j = 0; j < hw; ++j) {
      out[c * hw + j] = static_cast<T>((s.pixels[c * hw + j] / 255.0 - m) / sd);
    }
  }
}

template <class T>
BatchLoader<T>::BatchLoader(const Dataset& data, const DatasetSpec& spec, int batch_size, bool train,
                            std::uint64_t seed)
    : data_(data), spec_(spec), batch_size_(batch_size), train_(train), seed_(seed) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  order_.resize(data.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  start_epoch(0);
}

template <class T>
void BatchLoader<T>::start_epoch(int epoch) {
  rng_.seed(seed_ * 1000003ULL + static_cast<std::uint64_t>(epoch));
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (train_) std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

template <class T>
std::size_t BatchLoader<T>::batches_per_epoch() const {
  return (order_.size() + static_cast<std::size_t>(batch_size_) - 1) / static_cast<std::size_t>(batch_size_);
}

template <class T>
bool BatchLoader<T>::next(Batch<T>& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(order_.size() - cursor_, static_cast<std::size_t>(batch_size_));
  const int side = spec_.image_size;
  batch.images = Tensor<T>({static_cast<int>(n), 3, side, side});
  batch.labels.resize(n);
  const std::size_t stride = static_cast<std::size_t>(3) * side * side;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = data_.get(order_[cursor_ + i]);
    if (train_) {
      s = augment(s, spec_.pad, side, side, rng_);
    } else if (s.height != side || s.width != side) {
      s = center_crop(s, side, side);
    }
    if (s.channels != 3) throw DataError(data_.name() + ": expected 3-channel images");
    write_normalized(s, spec_.norm, batch.images.data() + i * stride);
    batch.labels[i] = s.label;
  }
  cursor_ += n;
  return true;
}

template void write_normalized<float>(const Sample&, const Normalization&, float*);
template void write_normalized<double>(const Sample&, const Normalization&, double*);
template class BatchLoader<float>;
template class BatchLoader<double>;

}  // namespace lsas

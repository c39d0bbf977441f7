#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "lsas/layers.hpp"
#include "lsas/tensor.hpp"

namespace lsas {

/// Planar 8-bit image (C, H, W) and its class label.
struct Sample {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
  int label = -1;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  [[nodiscard]] virtual std::size_t size() const = 0;
  [[nodiscard]] virtual Sample get(std::size_t index) const = 0;
  [[nodiscard]] virtual int label(std::size_t index) const = 0;
  [[nodiscard]] virtual int num_classes() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

/// Fixed-size images held in memory.
class InMemoryDataset final : public Dataset {
 public:
  InMemoryDataset(std::string name, int channels, int height, int width, int num_classes);

  void add(const std::uint8_t* pixels, int label);
  [[nodiscard]] std::size_t size() const override { return labels_.size(); }
  [[nodiscard]] Sample get(std::size_t index) const override;
  [[nodiscard]] int label(std::size_t index) const override { return labels_.at(index); }
  [[nodiscard]] int num_classes() const override { return num_classes_; }
  [[nodiscard]] std::string name() const override { return name_; }
  [[nodiscard]] const std::vector<int>& labels() const noexcept { return labels_; }

 private:
  std::string name_;
  int channels_, height_, width_, num_classes_;
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
};

/// `root/<class>/<image>` tree, decoded lazily. The shorter side is resized to
/// `resize` and a centered `crop` x `crop` window kept.
class ImageFolderDataset final : public Dataset {
 public:
  ImageFolderDataset(const std::filesystem::path& root, int resize = 256, int crop = 224);

  [[nodiscard]] std::size_t size() const override { return files_.size(); }
  [[nodiscard]] Sample get(std::size_t index) const override;
  [[nodiscard]] int label(std::size_t index) const override { return files_.at(index).second; }
  [[nodiscard]] int num_classes() const override { return static_cast<int>(classes_.size()); }
  [[nodiscard]] std::string name() const override { return "imagenet"; }
  [[nodiscard]] const std::vector<std::string>& classes() const noexcept { return classes_; }

 private:
  std::vector<std::string> classes_;
  std::vector<std::pair<std::filesystem::path, int>> files_;
  int resize_, crop_;
};

/// View over selected indices of another dataset (which must outlive it).
class SubsetDataset final : public Dataset {
 public:
  SubsetDataset(const Dataset& base, std::vector<std::size_t> indices);

  [[nodiscard]] std::size_t size() const override { return indices_.size(); }
  [[nodiscard]] Sample get(std::size_t index) const override { return base_.get(indices_.at(index)); }
  [[nodiscard]] int label(std::size_t index) const override { return base_.label(indices_.at(index)); }
  [[nodiscard]] int num_classes() const override { return base_.num_classes(); }
  [[nodiscard]] std::string name() const override { return base_.name(); }

 private:
  const Dataset& base_;
  std::vector<std::size_t> indices_;
};

/// First `count` indices in dataset order, taking at most ceil(count / classes)
/// per class so the subset is class-balanced when the source allows it.
std::vector<std::size_t> balanced_subset(const Dataset& data, std::size_t count);

struct Normalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.25, 0.25, 0.25};
};

struct DatasetSpec {
  std::string name;  // cifar10 | cifar100 | stl10 | imagenet | synthetic
  int num_classes = 10;
  int image_size = 32;
  int pad = 4;  // reflect padding before the random crop
  Normalization norm;
};

/// Throws ConfigError for unknown names.
DatasetSpec dataset_spec(const std::string& name);

struct DataSplits {
  std::unique_ptr<Dataset> train;
  std::unique_ptr<Dataset> test;
  DatasetSpec spec;
};

/// Dataset root: `root` if non-empty, else $LSAS_DATA_DIR, else `./data`.
std::filesystem::path data_root(const std::filesystem::path& root = {});

/// Loads both splits. Missing files raise DataError naming the expected layout.
DataSplits load_dataset(const std::string& name, const std::filesystem::path& root = {});

/// Raw binary readers (CIFAR-10: 1-byte label records; CIFAR-100: coarse+fine
/// label bytes, fine label used; STL-10: column-major images, 1-based labels).
std::unique_ptr<InMemoryDataset> read_cifar10(const std::vector<std::filesystem::path>& files);
std::unique_ptr<InMemoryDataset> read_cifar100(const std::filesystem::path& file);
std::unique_ptr<InMemoryDataset> read_stl10(const std::filesystem::path& images, const std::filesystem::path& labels);

struct SyntheticOptions {
  std::size_t train_size = 512;
  std::size_t test_size = 128;
  int num_classes = 10;
  int image_size = 32;
  std::uint64_t seed = 0;
};

/// Learnable toy task: each class is a colored square of a class-specific hue
/// and size at a random position over textured noise.
DataSplits synthetic_dataset(const SyntheticOptions& options);

/// Reflect padding, random crop and horizontal flip (p = 0.5).
Sample augment(const Sample& s, int pad, int crop_height, int crop_width, Rng& rng);
Sample center_crop(const Sample& s, int crop_height, int crop_width);

template <class T>
void write_normalized(const Sample& s, const Normalization& norm, T* out);

template <class T>
struct Batch {
  Tensor<T> images;  // (N, C, H, W)
  std::vector<int> labels;
};

/// Deterministic epoch iterator; the shuffle order and augmentation draws depend
/// only on (seed, epoch).
template <class T>
class BatchLoader {
 public:
  BatchLoader(const Dataset& data, const DatasetSpec& spec, int batch_size, bool train, std::uint64_t seed);

  void start_epoch(int epoch);
  [[nodiscard]] bool next(Batch<T>& batch);
  [[nodiscard]] std::size_t batches_per_epoch() const;

 private:
  const Dataset& data_;
  DatasetSpec spec_;
  int batch_size_;
  bool train_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace lsas

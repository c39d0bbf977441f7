#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lsas/base_attention.hpp"
#include "lsas/lsas_module.hpp"

namespace lsas {

struct ModelConfig {
  int depth = 164;
  int num_classes = 10;
  AttentionKind attention = AttentionKind::None;
  int lsas_order = 1;
  int gate_mu = 128;
  int input_height = 32;
  int input_width = 32;
  int se_reduction = 16;
  int eca_kernel = 3;

  /// Depths 83/164/245: pre-activation bottleneck nets for 32x32 / 96x96 inputs.
  [[nodiscard]] bool is_cifar_family() const noexcept { return depth == 83 || depth == 164 || depth == 245; }
  /// Depths 34/50: standard ImageNet ResNets.
  [[nodiscard]] bool is_imagenet_family() const noexcept { return depth == 34 || depth == 50; }
  void validate() const;
};

template <class T>
class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig config) : config_(config) {}

  void add(std::string name, std::unique_ptr<Layer<T>> layer) {
    layers_.emplace_back(std::move(name), std::move(layer));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return forward_range(x, 0, layers_.size(), mode); }
  Tensor<T> backward(const Tensor<T>& grad_logits) { return backward_range(grad_logits, 0, layers_.size()); }

  /// Runs layers [first, last).
  Tensor<T> forward_range(const Tensor<T>& x, std::size_t first, std::size_t last, Mode mode);
  /// Back-propagates through layers [first, last) in reverse order.
  Tensor<T> backward_range(const Tensor<T>& grad, std::size_t first, std::size_t last);

  ParamList<T> parameters();
  BufferList<T> buffers();
  void zero_grad();

  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }
  [[nodiscard]] const std::string& layer_name(std::size_t i) const { return layers_.at(i).first; }
  [[nodiscard]] std::size_t layer_index(const std::string& name) const;
  Layer<T>& layer(std::size_t i) { return *layers_.at(i).second; }
  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }

  /// Name of the last residual block (default Grad-CAM layer).
  [[nodiscard]] std::string last_block_name() const;

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed = 0);

/// Exact number of trainable scalars.
template <class T>
std::size_t count_parameters(Model<T>& model);

struct ModuleCount {
  std::string name;
  std::size_t parameters = 0;
};

/// Per top-level layer counts, plus one "attention" row summing every attention submodule.
template <class T>
std::vector<ModuleCount> count_parameters_by_module(Model<T>& model);

/// Pre-activation bottleneck: BN-ReLU-conv1x1-BN-ReLU-conv3x3-BN-ReLU-conv1x1(x4),
/// attention on the residual branch, then the additive shortcut.
template <class T>
class PreActBottleneck final : public Layer<T> {
 public:
  PreActBottleneck(int in_channels, int planes, int stride, std::unique_ptr<LSASModule<T>> attention, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  LSASModule<T>* attention() noexcept { return attention_.get(); }
  static constexpr int kExpansion = 4;

 private:
  BatchNorm2d<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn2_;
  ReLU<T> relu2_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn3_;
  ReLU<T> relu3_;
  Conv2d<T> conv3_;
  std::unique_ptr<Conv2d<T>> shortcut_;
  std::unique_ptr<LSASModule<T>> attention_;
};

/// Post-activation basic block (ResNet-34).
template <class T>
class BasicBlock final : public Layer<T> {
 public:
  BasicBlock(int in_channels, int planes, int stride, std::unique_ptr<LSASModule<T>> attention, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  LSASModule<T>* attention() noexcept { return attention_.get(); }
  static constexpr int kExpansion = 1;

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  std::unique_ptr<Conv2d<T>> shortcut_conv_;
  std::unique_ptr<BatchNorm2d<T>> shortcut_bn_;
  std::unique_ptr<LSASModule<T>> attention_;
  ReLU<T> relu_out_;
};

/// Post-activation bottleneck (ResNet-50), stride on the 3x3 conv.
template <class T>
class Bottleneck final : public Layer<T> {
 public:
  Bottleneck(int in_channels, int planes, int stride, std::unique_ptr<LSASModule<T>> attention, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  LSASModule<T>* attention() noexcept { return attention_.get(); }
  static constexpr int kExpansion = 4;

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  ReLU<T> relu2_;
  Conv2d<T> conv3_;
  BatchNorm2d<T> bn3_;
  std::unique_ptr<Conv2d<T>> shortcut_conv_;
  std::unique_ptr<BatchNorm2d<T>> shortcut_bn_;
  std::unique_ptr<LSASModule<T>> attention_;
  ReLU<T> relu_out_;
};

}  // namespace lsas

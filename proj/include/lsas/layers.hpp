#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lsas/tensor.hpp"

namespace lsas {

/// Train: batch statistics, caches for backward.
/// Eval: running statistics, caches for backward (Grad-CAM).
/// Inference: running statistics, no caches.
enum class Mode { Train, Eval, Inference };

inline bool keeps_cache(Mode m) noexcept { return m != Mode::Inference; }

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <class T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;
template <class T>
using BufferList = std::vector<BufferRef<T>>;

using Rng = std::mt19937_64;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// backward() consumes the caches written by the most recent forward() in a
  /// caching mode and accumulates into parameter gradients.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual void parameters(const std::string& /*prefix*/, ParamList<T>& /*out*/) {}
  virtual void buffers(const std::string& /*prefix*/, BufferList<T>& /*out*/) {}
};

template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;

  Tensor<T>& weight() noexcept { return weight_; }
  Tensor<T>& bias() noexcept { return bias_; }
  [[nodiscard]] int out_channels() const noexcept { return out_channels_; }

 private:
  [[nodiscard]] bool is_pointwise() const noexcept { return kernel_ == 1 && stride_ == 1 && padding_ == 0; }

  int in_channels_, out_channels_, kernel_, stride_, padding_;
  bool has_bias_;
  Tensor<T> weight_, grad_weight_, bias_, grad_bias_;
  Tensor<T> input_;
};

/// Batch normalization over (N, H, W) per channel; accepts (N, C, H, W) or (N, C).
template <class T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, T eps = T(1e-5), T momentum = T(0.1));

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  Tensor<T>& weight() noexcept { return weight_; }
  Tensor<T>& bias() noexcept { return bias_; }
  Tensor<T>& running_mean() noexcept { return running_mean_; }
  Tensor<T>& running_var() noexcept { return running_var_; }

 private:
  int channels_;
  T eps_, momentum_;
  Tensor<T> weight_, grad_weight_, bias_, grad_bias_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
  bool batch_stats_ = false;
};

template <class T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  std::vector<std::uint8_t> mask_;
  std::vector<int> shape_;
};

template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(int kernel, int stride, int padding) : kernel_(kernel), stride_(stride), padding_(padding) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  int kernel_, stride_, padding_;
  std::vector<int> input_shape_;
  std::vector<std::size_t> argmax_;
};

/// (N, C, H, W) -> (N, C).
template <class T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  std::vector<int> input_shape_;
};

/// (N, in) -> (N, out).
template <class T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features, bool bias, Rng& rng, T init_bound = T(-1));

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;

  Tensor<T>& weight() noexcept { return weight_; }
  Tensor<T>& bias() noexcept { return bias_; }

 private:
  int in_, out_;
  bool has_bias_;
  Tensor<T> weight_, grad_weight_, bias_, grad_bias_;
  Tensor<T> input_;
};

template <class T>
class Sequential final : public Layer<T> {
 public:
  Sequential& add(std::string name, std::unique_ptr<Layer<T>> layer) {
    layers_.emplace_back(std::move(name), std::move(layer));
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (auto& [name, layer] : layers_) h = layer->forward(h, mode);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
    return g;
  }
  void parameters(const std::string& prefix, ParamList<T>& out) override {
    for (auto& [name, layer] : layers_) layer->parameters(join_name(prefix, name), out);
  }
  void buffers(const std::string& prefix, BufferList<T>& out) override {
    for (auto& [name, layer] : layers_) layer->buffers(join_name(prefix, name), out);
  }

  [[nodiscard]] std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i).second; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer<T>>>> layers_;
};

/// He-style uniform initialization, bound = sqrt(6 / fan_in).
template <class T>
void fan_in_uniform(Tensor<T>& w, int fan_in, Rng& rng);

/// x[n, c, :, :] *= scale[n, c]
template <class T>
void scale_channels(Tensor<T>& x, const Tensor<T>& scale);

/// Per-(n, c) spatial sum of a * b.
template <class T>
Tensor<T> channel_dot(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace lsas

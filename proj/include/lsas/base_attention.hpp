#pragma once

// Channel-attention operators g(.) that the sub-attention chain wraps. Each
// module maps a feature map (N, C, H, W) to pre-sigmoid channel logits (N, C);
// the sigmoid and the multiplication back into x are owned by the caller.

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsas/attention_core.hpp"
#include "lsas/layers.hpp"

namespace lsas {

enum class AttentionKind { None, SE, CBAM, SRM, ECA };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(std::string_view name);

template <class T>
class BaseAttention {
 public:
  virtual ~BaseAttention() = default;

  [[nodiscard]] virtual AttentionKind kind() const = 0;
  [[nodiscard]] virtual int channels() const = 0;

  /// Pre-sigmoid logits, shape (N, C).
  virtual Tensor<T> logits(const Tensor<T>& x, Mode mode) = 0;
  /// dL/dx through the descriptor path only, given dL/dlogits of shape (N, C).
  virtual Tensor<T> logits_backward(const Tensor<T>& grad_logits) = 0;

  virtual void parameters(const std::string& /*prefix*/, ParamList<T>& /*out*/) {}
  virtual void buffers(const std::string& /*prefix*/, BufferList<T>& /*out*/) {}

  /// Stage applied after the channel multiplication (CBAM's spatial branch).
  virtual Layer<T>* spatial_stage() { return nullptr; }
};

/// Spatial mean per channel of a single (C, H, W) map.
template <class T>
ChannelVector<T> global_average_pool(const FeatureMap<T>& x);

/// Batched spatial mean, (N, C, H, W) -> (N, C).
template <class T>
Tensor<T> global_average_pool_batch(const Tensor<T>& x);

template <class T>
struct SEWeights {
  Tensor<T> w1;  // (C/r, C)
  Tensor<T> b1;  // (C/r)
  Tensor<T> w2;  // (C, C/r)
  Tensor<T> b2;  // (C)
};

/// W2 * ReLU(W1 * u + b1) + b2 on a single channel descriptor.
template <class T>
ChannelVector<T> se_logits(std::span<const T> u, const SEWeights<T>& weights);

template <class T>
class SEAttention final : public BaseAttention<T> {
 public:
  SEAttention(int channels, int reduction, Rng& rng);

  [[nodiscard]] AttentionKind kind() const override { return AttentionKind::SE; }
  [[nodiscard]] int channels() const override { return channels_; }
  Tensor<T> logits(const Tensor<T>& x, Mode mode) override;
  Tensor<T> logits_backward(const Tensor<T>& grad_logits) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;

  [[nodiscard]] int hidden() const noexcept { return hidden_; }
  Linear<T>& fc1() noexcept { return fc1_; }
  Linear<T>& fc2() noexcept { return fc2_; }

 private:
  int channels_, hidden_;
  GlobalAvgPool<T> pool_;
  Linear<T> fc1_;
  ReLU<T> relu_;
  Linear<T> fc2_;
};

/// CBAM spatial branch: [channel-mean, channel-max] -> 7x7 conv -> BN -> sigmoid -> multiply.
template <class T>
class SpatialGate final : public Layer<T> {
 public:
  SpatialGate(int kernel, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  Conv2d<T>& conv() noexcept { return conv_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  Tensor<T> input_, gate_;
  std::vector<int> argmax_channel_;
};

template <class T>
class CBAMAttention final : public BaseAttention<T> {
 public:
  CBAMAttention(int channels, int reduction, Rng& rng);

  [[nodiscard]] AttentionKind kind() const override { return AttentionKind::CBAM; }
  [[nodiscard]] int channels() const override { return channels_; }
  Tensor<T> logits(const Tensor<T>& x, Mode mode) override;
  Tensor<T> logits_backward(const Tensor<T>& grad_logits) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;
  Layer<T>* spatial_stage() override { return &spatial_; }

 private:
  int channels_, hidden_;
  // The shared MLP runs once on the stacked [avg; max] descriptors (2N, C).
  Linear<T> fc1_;
  ReLU<T> relu_;
  Linear<T> fc2_;
  SpatialGate<T> spatial_;
  std::vector<int> input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Style pooling (mean, std) -> channel-wise fully connected integration -> BN.
template <class T>
class SRMAttention final : public BaseAttention<T> {
 public:
  SRMAttention(int channels, Rng& rng, T eps = T(1e-5));

  [[nodiscard]] AttentionKind kind() const override { return AttentionKind::SRM; }
  [[nodiscard]] int channels() const override { return channels_; }
  Tensor<T> logits(const Tensor<T>& x, Mode mode) override;
  Tensor<T> logits_backward(const Tensor<T>& grad_logits) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  Tensor<T>& cfc_weight() noexcept { return cfc_; }

 private:
  int channels_;
  T eps_;
  Tensor<T> cfc_, grad_cfc_;  // (C, 2): weights for [mean, std]
  BatchNorm2d<T> bn_;
  Tensor<T> input_, mean_, std_;
};

/// 1-D convolution (no bias, zero padding) across the channel axis of GAP(x).
template <class T>
class ECAAttention final : public BaseAttention<T> {
 public:
  ECAAttention(int channels, int kernel, Rng& rng);

  [[nodiscard]] AttentionKind kind() const override { return AttentionKind::ECA; }
  [[nodiscard]] int channels() const override { return channels_; }
  Tensor<T> logits(const Tensor<T>& x, Mode mode) override;
  Tensor<T> logits_backward(const Tensor<T>& grad_logits) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;

  Tensor<T>& kernel_weight() noexcept { return weight_; }
  [[nodiscard]] int kernel() const noexcept { return kernel_; }

 private:
  int channels_, kernel_;
  Tensor<T> weight_, grad_weight_;
  GlobalAvgPool<T> pool_;
  Tensor<T> pooled_;
};

struct AttentionOptions {
  int se_reduction = 16;
  int eca_kernel = 3;
};

template <class T>
std::unique_ptr<BaseAttention<T>> make_attention(AttentionKind kind, int channels, const AttentionOptions& opts,
                                                 Rng& rng);

/// The unwrapped module output x * sigmoid(g(x)), followed by any spatial stage.
template <class T>
Tensor<T> apply_standalone(BaseAttention<T>& base, const Tensor<T>& x, Mode mode);

}  // namespace lsas

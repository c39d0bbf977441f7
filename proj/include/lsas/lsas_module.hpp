#pragma once

#include <memory>

#include "lsas/attention_core.hpp"
#include "lsas/base_attention.hpp"

namespace lsas {

/// A base attention module enhanced with a sub-attention chain and a selection
/// gate. Forward computes
///
///   y = x * SG(chain_compose(chain_forward(g(x), chain)))
///
/// followed by the base module's spatial stage, if any. With a closed gate the
/// base operator is never evaluated and y = x.
template <class T>
class LSASModule final : public Layer<T> {
 public:
  LSASModule(std::unique_ptr<BaseAttention<T>> base, SubAttentionChain<T> chain, GateConfig gate);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void parameters(const std::string& prefix, ParamList<T>& out) override;
  void buffers(const std::string& prefix, BufferList<T>& out) override;

  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] bool gate_open() const noexcept { return gate_.is_open(channels_); }
  [[nodiscard]] const GateConfig& gate() const noexcept { return gate_; }
  [[nodiscard]] int order() const noexcept { return chain_.order(); }
  BaseAttention<T>& base() noexcept { return *base_; }
  /// Current chain values (reflects optimizer updates).
  [[nodiscard]] SubAttentionChain<T> chain() const;
  void set_chain(SubAttentionChain<T> chain);

  /// Number of times the base operator has run; used to verify the structural skip.
  [[nodiscard]] long base_evaluations() const noexcept { return base_evaluations_; }

 private:
  void sync_chain_tensors();
  void sync_chain_from_tensors();

  std::unique_ptr<BaseAttention<T>> base_;
  SubAttentionChain<T> chain_;
  GateConfig gate_;
  int channels_;
  // Tensor views of gamma_i / beta_i so the optimizer and checkpoints can address them.
  std::vector<Tensor<T>> gammas_, betas_, grad_gammas_, grad_betas_;
  Tensor<T> input_, logits_, scale_;
  bool passthrough_ = false;
  long base_evaluations_ = 0;
};

/// Single-map form: x is (C, H, W).
template <class T>
FeatureMap<T> lsas_forward(const FeatureMap<T>& x, LSASModule<T>& module);

}  // namespace lsas

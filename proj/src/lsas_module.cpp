#include "lsas/lsas_module.hpp"

namespace lsas {

template <class T>
LSASModule<T>::LSASModule(std::unique_ptr<BaseAttention<T>> base, SubAttentionChain<T> chain, GateConfig gate)
    : base_(std::move(base)), chain_(std::move(chain)), gate_(gate), channels_(base_ ? base_->channels() : 0) {
  if (!base_) throw InvalidArgument("LSASModule requires a base attention module");
  gate_.validate();
  if (chain_.order() > 0 && chain_.channels() != channels_) {
    throw InvalidArgument("LSASModule: chain has " + std::to_string(chain_.channels()) + " channels, base has " +
                          std::to_string(channels_));
  }
  for (int i = 1; i <= chain_.order(); ++i) {
    gammas_.emplace_back(std::vector<int>{channels_}, chain_.level(i).gamma);
    betas_.emplace_back(std::vector<int>{channels_}, chain_.level(i).beta);
    grad_gammas_.emplace_back(std::vector<int>{channels_});
    grad_betas_.emplace_back(std::vector<int>{channels_});
  }
}

template <class T>
void LSASModule<T>::sync_chain_from_tensors() {
  for (int i = 1; i <= chain_.order(); ++i) {
    auto& level = chain_.level(i);
    level.gamma = gammas_[static_cast<std::size_t>(i - 1)].storage();
    level.beta = betas_[static_cast<std::size_t>(i - 1)].storage();
  }
}

template <class T>
void LSASModule<T>::sync_chain_tensors() {
  for (int i = 1; i <= chain_.order(); ++i) {
    gammas_[static_cast<std::size_t>(i - 1)].storage() = chain_.level(i).gamma;
    betas_[static_cast<std::size_t>(i - 1)].storage() = chain_.level(i).beta;
  }
}

template <class T>
SubAttentionChain<T> LSASModule<T>::chain() const {
  std::vector<AffinePair<T>> levels;
  for (std::size_t k = 0; k < gammas_.size(); ++k) levels.push_back({gammas_[k].storage(), betas_[k].storage()});
  return SubAttentionChain<T>(channels_, std::move(levels));
}

template <class T>
void LSASModule<T>::set_chain(SubAttentionChain<T> chain) {
  if (chain.order() != chain_.order() || (chain.order() > 0 && chain.channels() != channels_)) {
    throw InvalidArgument("LSASModule::set_chain: order/channel count must match the constructed chain");
  }
  chain_ = std::move(chain);
  sync_chain_tensors();
}

template <class T>
Tensor<T> LSASModule<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "LSASModule");
  if (x.dim(1) != channels_) {
    throw InvalidArgument("LSASModule: input has " + std::to_string(x.dim(1)) + " channels, module expects " +
                          std::to_string(channels_));
  }
  passthrough_ = !gate_open();
  if (passthrough_) return x;

  // Parameters may have been updated through the tensor views since the last call.
  sync_chain_from_tensors();

  ++base_evaluations_;
  Tensor<T> v = base_->logits(x, mode);
  const int n = x.dim(0);
  Tensor<T> scale({n, channels_});
  for (int i = 0; i < n; ++i) {
    const std::span<const T> row(v.data() + static_cast<std::size_t>(i) * channels_, static_cast<std::size_t>(channels_));
    const auto s = chain_compose(chain_forward(row, chain_));
    std::copy(s.begin(), s.end(), scale.data() + static_cast<std::size_t>(i) * channels_);
  }
  Tensor<T> y = x;
  scale_channels(y, scale);
  if (keeps_cache(mode)) {
    input_ = x;
    logits_ = std::move(v);
    scale_ = std::move(scale);
  }
  if (Layer<T>* spatial = base_->spatial_stage()) y = spatial->forward(y, mode);
  return y;
}

template <class T>
Tensor<T> LSASModule<T>::backward(const Tensor<T>& grad_out) {
  if (passthrough_) return grad_out;
  if (input_.empty()) throw InvalidArgument("LSASModule::backward called without a cached forward pass");
  Tensor<T> g = grad_out;
  if (Layer<T>* spatial = base_->spatial_stage()) g = spatial->backward(g);

  const Tensor<T> dscale = channel_dot(g, input_);
  Tensor<T> dx = g;
  scale_channels(dx, scale_);

  const int n = input_.dim(0);
  Tensor<T> dlogits({n, channels_});
  for (int i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * channels_;
    const std::span<const T> v0(logits_.data() + off, static_cast<std::size_t>(channels_));
    const std::span<const T> up(dscale.data() + off, static_cast<std::size_t>(channels_));
    const auto grads = chain_gradients(v0, chain_, up);
    std::copy(grads.grad_v0.begin(), grads.grad_v0.end(), dlogits.data() + off);
    for (int l = 0; l < chain_.order(); ++l) {
      auto& gg = grad_gammas_[static_cast<std::size_t>(l)];
      auto& gb = grad_betas_[static_cast<std::size_t>(l)];
      for (int c = 0; c < channels_; ++c) {
        gg[static_cast<std::size_t>(c)] += grads.grad_gammas[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
        gb[static_cast<std::size_t>(c)] += grads.grad_betas[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
      }
    }
  }
  const Tensor<T> dx_desc = base_->logits_backward(dlogits);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_desc[i];
  return dx;
}

template <class T>
void LSASModule<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  base_->parameters(prefix, out);
  for (int i = 1; i <= chain_.order(); ++i) {
    const auto k = static_cast<std::size_t>(i - 1);
    out.push_back({join_name(prefix, "lsas.gamma" + std::to_string(i)), &gammas_[k], &grad_gammas_[k]});
    out.push_back({join_name(prefix, "lsas.beta" + std::to_string(i)), &betas_[k], &grad_betas_[k]});
  }
}

template <class T>
void LSASModule<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  base_->buffers(prefix, out);
}

template <class T>
FeatureMap<T> lsas_forward(const FeatureMap<T>& x, LSASModule<T>& module) {
  require_rank(x, 3, "lsas_forward");
  Tensor<T> batched(std::vector<int>{1, x.dim(0), x.dim(1), x.dim(2)}, x.storage());
  Tensor<T> y = module.forward(batched, Mode::Inference);
  y.reshape({x.dim(0), x.dim(1), x.dim(2)});
  return y;
}

template class LSASModule<float>;
template class LSASModule<double>;
template FeatureMap<float> lsas_forward<float>(const FeatureMap<float>&, LSASModule<float>&);
template FeatureMap<double> lsas_forward<double>(const FeatureMap<double>&, LSASModule<double>&);

}  // namespace lsas

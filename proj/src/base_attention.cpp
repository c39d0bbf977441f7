#include "lsas/base_attention.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace lsas {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::None: return "none";
    case AttentionKind::SE: return "se";
    case AttentionKind::CBAM: return "cbam";
    case AttentionKind::SRM: return "srm";
    case AttentionKind::ECA: return "eca";
  }
  return "none";
}

AttentionKind parse_attention_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "none") return AttentionKind::None;
  if (lower == "se") return AttentionKind::SE;
  if (lower == "cbam") return AttentionKind::CBAM;
  if (lower == "srm") return AttentionKind::SRM;
  if (lower == "eca") return AttentionKind::ECA;
  throw ConfigError("unknown attention kind '" + std::string(name) + "' (expected none|se|cbam|srm|eca)");
}

template <class T>
ChannelVector<T> global_average_pool(const FeatureMap<T>& x) {
  require_rank(x, 3, "global_average_pool");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  if (hw == 0) throw InvalidArgument("global_average_pool: empty spatial extent");
  ChannelVector<T> u(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    const T* p = x.data() + static_cast<std::size_t>(k) * hw;
    T acc = T(0);
    for (std::size_t j = 0; j < hw; ++j) acc += p[j];
    u[static_cast<std::size_t>(k)] = acc / static_cast<T>(hw);
  }
  return u;
}

template <class T>
Tensor<T> global_average_pool_batch(const Tensor<T>& x) {
  GlobalAvgPool<T> pool;
  return pool.forward(x, Mode::Inference);
}

template <class T>
ChannelVector<T> se_logits(std::span<const T> u, const SEWeights<T>& weights) {
  const int hidden = weights.w1.dim(0);
  const int channels = weights.w1.dim(1);
  if (static_cast<int>(u.size()) != channels || weights.w2.dim(0) != channels || weights.w2.dim(1) != hidden ||
      static_cast<int>(weights.b1.size()) != hidden || static_cast<int>(weights.b2.size()) != channels) {
    throw InvalidArgument("se_logits: weight shapes inconsistent with descriptor length " + std::to_string(u.size()));
  }
  std::vector<T> h(static_cast<std::size_t>(hidden));
  for (int j = 0; j < hidden; ++j) {
    T acc = weights.b1[static_cast<std::size_t>(j)];
    for (int c = 0; c < channels; ++c) acc += weights.w1[static_cast<std::size_t>(j) * channels + c] * u[static_cast<std::size_t>(c)];
    h[static_cast<std::size_t>(j)] = std::max(acc, T(0));
  }
  ChannelVector<T> v(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    T acc = weights.b2[static_cast<std::size_t>(c)];
    for (int j = 0; j < hidden; ++j) acc += weights.w2[static_cast<std::size_t>(c) * hidden + j] * h[static_cast<std::size_t>(j)];
    v[static_cast<std::size_t>(c)] = acc;
  }
  return v;
}

namespace {

int reduced_width(int channels, int reduction) {
  if (reduction <= 0 || channels % reduction != 0) {
    throw ConfigError("channel count " + std::to_string(channels) + " is not divisible by reduction ratio " +
                      std::to_string(reduction));
  }
  return channels / reduction;
}

}  // namespace

// ---------------------------------------------------------------- SE

template <class T>
SEAttention<T>::SEAttention(int channels, int reduction, Rng& rng)
    : channels_(channels),
      hidden_(reduced_width(channels, reduction)),
      fc1_(channels, hidden_, true, rng),
      fc2_(hidden_, channels, true, rng) {}

template <class T>
Tensor<T> SEAttention<T>::logits(const Tensor<T>& x, Mode mode) {
  return fc2_.forward(relu_.forward(fc1_.forward(pool_.forward(x, mode), mode), mode), mode);
}

template <class T>
Tensor<T> SEAttention<T>::logits_backward(const Tensor<T>& grad_logits) {
  return pool_.backward(fc1_.backward(relu_.backward(fc2_.backward(grad_logits))));
}

template <class T>
void SEAttention<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  fc1_.parameters(join_name(prefix, "fc1"), out);
  fc2_.parameters(join_name(prefix, "fc2"), out);
}

// ---------------------------------------------------------------- CBAM

template <class T>
SpatialGate<T>::SpatialGate(int kernel, Rng& rng) : conv_(2, 1, kernel, 1, kernel / 2, false, rng), bn_(1) {}

template <class T>
Tensor<T> SpatialGate<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "SpatialGate");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> pooled({n, 2, h, w});
  std::vector<int> argmax(static_cast<std::size_t>(n) * hw);
  for (int i = 0; i < n; ++i) {
    T* mean = pooled.data() + static_cast<std::size_t>(i) * 2 * hw;
    T* mx = mean + hw;
    std::fill(mx, mx + hw, -std::numeric_limits<T>::infinity());
    for (int k = 0; k < c; ++k) {
      const T* p = x.data() + (static_cast<std::size_t>(i) * c + k) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        mean[j] += p[j];
        if (p[j] > mx[j]) {
          mx[j] = p[j];
          argmax[static_cast<std::size_t>(i) * hw + j] = k;
        }
      }
    }
    for (std::size_t j = 0; j < hw; ++j) mean[j] /= static_cast<T>(c);
  }
  Tensor<T> z = bn_.forward(conv_.forward(pooled, mode), mode);
  for (auto& v : z.values()) v = sigmoid(v);

  Tensor<T> y = x;
  for (int i = 0; i < n; ++i) {
    const T* s = z.data() + static_cast<std::size_t>(i) * hw;
    for (int k = 0; k < c; ++k) {
      T* q = y.data() + (static_cast<std::size_t>(i) * c + k) * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] *= s[j];
    }
  }
  if (keeps_cache(mode)) {
    input_ = x;
    gate_ = std::move(z);
    argmax_channel_ = std::move(argmax);
  }
  return y;
}

template <class T>
Tensor<T> SpatialGate<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  if (x.empty()) throw InvalidArgument("SpatialGate::backward called without a cached forward pass");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> dx(x.shape());
  Tensor<T> dz({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    const T* s = gate_.data() + static_cast<std::size_t>(i) * hw;
    T* ds = dz.data() + static_cast<std::size_t>(i) * hw;
    for (int k = 0; k < c; ++k) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + k) * hw;
      const T* g = grad_out.data() + off;
      const T* p = x.data() + off;
      T* d = dx.data() + off;
      for (std::size_t j = 0; j < hw; ++j) {
        d[j] = g[j] * s[j];
        ds[j] += g[j] * p[j];
      }
    }
    for (std::size_t j = 0; j < hw; ++j) ds[j] *= s[j] * (T(1) - s[j]);
  }
  const Tensor<T> dpooled = conv_.backward(bn_.backward(dz));
  for (int i = 0; i < n; ++i) {
    const T* dmean = dpooled.data() + static_cast<std::size_t>(i) * 2 * hw;
    const T* dmax = dmean + hw;
    for (int k = 0; k < c; ++k) {
      T* d = dx.data() + (static_cast<std::size_t>(i) * c + k) * hw;
      for (std::size_t j = 0; j < hw; ++j) d[j] += dmean[j] / static_cast<T>(c);
    }
    for (std::size_t j = 0; j < hw; ++j) {
      const int k = argmax_channel_[static_cast<std::size_t>(i) * hw + j];
      dx[(static_cast<std::size_t>(i) * c + k) * hw + j] += dmax[j];
    }
  }
  return dx;
}

template <class T>
void SpatialGate<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  conv_.parameters(join_name(prefix, "conv"), out);
  bn_.parameters(join_name(prefix, "bn"), out);
}

template <class T>
void SpatialGate<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  bn_.buffers(join_name(prefix, "bn"), out);
}

template <class T>
CBAMAttention<T>::CBAMAttention(int channels, int reduction, Rng& rng)
    : channels_(channels),
      hidden_(reduced_width(channels, reduction)),
      fc1_(channels, hidden_, true, rng),
      fc2_(hidden_, channels, true, rng),
      spatial_(7, rng) {}

template <class T>
Tensor<T> CBAMAttention<T>::logits(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "CBAMAttention");
  if (x.dim(1) != channels_) throw InvalidArgument("CBAMAttention: channel mismatch");
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (hw == 0) throw InvalidArgument("CBAMAttention: empty spatial extent");
  Tensor<T> stacked({2 * n, channels_});
  std::vector<std::size_t> argmax(static_cast<std::size_t>(n) * channels_);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < channels_; ++k) {
      const std::size_t plane = static_cast<std::size_t>(i) * channels_ + k;
      const T* p = x.data() + plane * hw;
      T sum = T(0);
      T best = p[0];
      std::size_t arg = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        sum += p[j];
        if (p[j] > best) {
          best = p[j];
          arg = j;
        }
      }
      stacked[plane] = sum / static_cast<T>(hw);
      stacked[static_cast<std::size_t>(n) * channels_ + plane] = best;
      argmax[plane] = plane * hw + arg;
    }
  }
  const Tensor<T> both = fc2_.forward(relu_.forward(fc1_.forward(stacked, mode), mode), mode);
  Tensor<T> v({n, channels_});
  const std::size_t half = static_cast<std::size_t>(n) * channels_;
  for (std::size_t i = 0; i < half; ++i) v[i] = both[i] + both[half + i];
  if (keeps_cache(mode)) {
    input_shape_ = x.shape();
    argmax_ = std::move(argmax);
  }
  return v;
}

template <class T>
Tensor<T> CBAMAttention<T>::logits_backward(const Tensor<T>& grad_logits) {
  const int n = grad_logits.dim(0);
  const std::size_t half = static_cast<std::size_t>(n) * channels_;
  Tensor<T> g({2 * n, channels_});
  for (std::size_t i = 0; i < half; ++i) g[i] = g[half + i] = grad_logits[i];
  const Tensor<T> du = fc1_.backward(relu_.backward(fc2_.backward(g)));
  Tensor<T> dx(input_shape_);
  const std::size_t hw = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  for (std::size_t plane = 0; plane < half; ++plane) {
    const T avg = du[plane] / static_cast<T>(hw);
    T* d = dx.data() + plane * hw;
    for (std::size_t j = 0; j < hw; ++j) d[j] = avg;
    dx[argmax_[plane]] += du[half + plane];
  }
  return dx;
}

template <class T>
void CBAMAttention<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  fc1_.parameters(join_name(prefix, "mlp.fc1"), out);
  fc2_.parameters(join_name(prefix, "mlp.fc2"), out);
  spatial_.parameters(join_name(prefix, "spatial"), out);
}

template <class T>
void CBAMAttention<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  spatial_.buffers(join_name(prefix, "spatial"), out);
}

// ---------------------------------------------------------------- SRM

template <class T>
SRMAttention<T>::SRMAttention(int channels, Rng& rng, T eps)
    : channels_(channels), eps_(eps), cfc_({channels, 2}), grad_cfc_({channels, 2}), bn_(channels) {
  fan_in_uniform(cfc_, 2, rng);
}

template <class T>
Tensor<T> SRMAttention<T>::logits(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "SRMAttention");
  if (x.dim(1) != channels_) throw InvalidArgument("SRMAttention: channel mismatch");
  const int n = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (hw == 0) throw InvalidArgument("SRMAttention: empty spatial extent");
  Tensor<T> mean({n, channels_}), stdev({n, channels_}), z({n, channels_});
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < channels_; ++k) {
      const std::size_t plane = static_cast<std::size_t>(i) * channels_ + k;
      const T* p = x.data() + plane * hw;
      T sum = T(0);
      for (std::size_t j = 0; j < hw; ++j) sum += p[j];
      const T mu = sum / static_cast<T>(hw);
      T sq = T(0);
      for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - mu) * (p[j] - mu);
      const T sd = std::sqrt(sq / static_cast<T>(hw) + eps_);
      mean[plane] = mu;
      stdev[plane] = sd;
      z[plane] = cfc_[static_cast<std::size_t>(k) * 2] * mu + cfc_[static_cast<std::size_t>(k) * 2 + 1] * sd;
    }
  }
  Tensor<T> v = bn_.forward(z, mode);
  if (keeps_cache(mode)) {
    input_ = x;
    mean_ = std::move(mean);
    std_ = std::move(stdev);
  }
  return v;
}

template <class T>
Tensor<T> SRMAttention<T>::logits_backward(const Tensor<T>& grad_logits) {
  if (input_.empty()) throw InvalidArgument("SRMAttention::logits_backward called without a cached forward pass");
  const Tensor<T> dz = bn_.backward(grad_logits);
  const int n = input_.dim(0);
  const std::size_t hw = static_cast<std::size_t>(input_.dim(2)) * input_.dim(3);
  Tensor<T> dx(input_.shape());
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < channels_; ++k) {
      const std::size_t plane = static_cast<std::size_t>(i) * channels_ + k;
      const T mu = mean_[plane], sd = std_[plane];
      grad_cfc_[static_cast<std::size_t>(k) * 2] += dz[plane] * mu;
      grad_cfc_[static_cast<std::size_t>(k) * 2 + 1] += dz[plane] * sd;
      const T dmean = dz[plane] * cfc_[static_cast<std::size_t>(k) * 2];
      const T dstd = dz[plane] * cfc_[static_cast<std::size_t>(k) * 2 + 1];
      const T* p = input_.data() + plane * hw;
      T* d = dx.data() + plane * hw;
      const T inv_hw = T(1) / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) d[j] = dmean * inv_hw + dstd * (p[j] - mu) * inv_hw / sd;
    }
  }
  return dx;
}

template <class T>
void SRMAttention<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  out.push_back({join_name(prefix, "cfc.weight"), &cfc_, &grad_cfc_});
  bn_.parameters(join_name(prefix, "bn"), out);
}

template <class T>
void SRMAttention<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  bn_.buffers(join_name(prefix, "bn"), out);
}

// ---------------------------------------------------------------- ECA

template <class T>
ECAAttention<T>::ECAAttention(int channels, int kernel, Rng& rng)
    : channels_(channels), kernel_(kernel), weight_({kernel}), grad_weight_({kernel}) {
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("ECA kernel size must be a positive odd integer");
  fan_in_uniform(weight_, kernel, rng);
}

template <class T>
Tensor<T> ECAAttention<T>::logits(const Tensor<T>& x, Mode mode) {
  if (x.rank() == 4 && x.dim(1) != channels_) throw InvalidArgument("ECAAttention: channel mismatch");
  Tensor<T> u = pool_.forward(x, mode);
  const int n = u.dim(0);
  const int pad = kernel_ / 2;
  Tensor<T> v({n, channels_});
  for (int i = 0; i < n; ++i) {
    const T* row = u.data() + static_cast<std::size_t>(i) * channels_;
    for (int c = 0; c < channels_; ++c) {
      T acc = T(0);
      for (int j = 0; j < kernel_; ++j) {
        const int src = c + j - pad;
        if (src >= 0 && src < channels_) acc += weight_[static_cast<std::size_t>(j)] * row[src];
      }
      v[static_cast<std::size_t>(i) * channels_ + c] = acc;
    }
  }
  if (keeps_cache(mode)) pooled_ = std::move(u);
  return v;
}

template <class T>
Tensor<T> ECAAttention<T>::logits_backward(const Tensor<T>& grad_logits) {
  const int n = grad_logits.dim(0);
  const int pad = kernel_ / 2;
  Tensor<T> du({n, channels_});
  for (int i = 0; i < n; ++i) {
    const T* row = pooled_.data() + static_cast<std::size_t>(i) * channels_;
    const T* g = grad_logits.data() + static_cast<std::size_t>(i) * channels_;
    T* d = du.data() + static_cast<std::size_t>(i) * channels_;
    for (int c = 0; c < channels_; ++c) {
      for (int j = 0; j < kernel_; ++j) {
        const int src = c + j - pad;
        if (src < 0 || src >= channels_) continue;
        grad_weight_[static_cast<std::size_t>(j)] += g[c] * row[src];
        d[src] += g[c] * weight_[static_cast<std::size_t>(j)];
      }
    }
  }
  return pool_.backward(du);
}

template <class T>
void ECAAttention<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  out.push_back({join_name(prefix, "conv.weight"), &weight_, &grad_weight_});
}

// ---------------------------------------------------------------- factories

template <class T>
std::unique_ptr<BaseAttention<T>> make_attention(AttentionKind kind, int channels, const AttentionOptions& opts,
                                                 Rng& rng) {
  switch (kind) {
    case AttentionKind::SE: return std::make_unique<SEAttention<T>>(channels, opts.se_reduction, rng);
    case AttentionKind::CBAM: return std::make_unique<CBAMAttention<T>>(channels, opts.se_reduction, rng);
    case AttentionKind::SRM: return std::make_unique<SRMAttention<T>>(channels, rng);
    case AttentionKind::ECA: return std::make_unique<ECAAttention<T>>(channels, opts.eca_kernel, rng);
    case AttentionKind::None: break;
  }
  throw ConfigError("make_attention: attention kind 'none' has no module");
}

template <class T>
Tensor<T> apply_standalone(BaseAttention<T>& base, const Tensor<T>& x, Mode mode) {
  Tensor<T> s = base.logits(x, mode);
  for (auto& v : s.values()) v = sigmoid(v);
  Tensor<T> y = x;
  scale_channels(y, s);
  if (Layer<T>* spatial = base.spatial_stage()) y = spatial->forward(y, mode);
  return y;
}

#define LSAS_INSTANTIATE_ATTENTION(T)                                                                   \
  template ChannelVector<T> global_average_pool<T>(const FeatureMap<T>&);                              \
  template Tensor<T> global_average_pool_batch<T>(const Tensor<T>&);                                   \
  template ChannelVector<T> se_logits<T>(std::span<const T>, const SEWeights<T>&);                      \
  template class SEAttention<T>;                                                                        \
  template class SpatialGate<T>;                                                                        \
  template class CBAMAttention<T>;                                                                      \
  template class SRMAttention<T>;                                                                       \
  template class ECAAttention<T>;                                                                       \
  template std::unique_ptr<BaseAttention<T>> make_attention<T>(AttentionKind, int, const AttentionOptions&, Rng&); \
  template Tensor<T> apply_standalone<T>(BaseAttention<T>&, const Tensor<T>&, Mode);

LSAS_INSTANTIATE_ATTENTION(float)
LSAS_INSTANTIATE_ATTENTION(double)

#undef LSAS_INSTANTIATE_ATTENTION

}  // namespace lsas

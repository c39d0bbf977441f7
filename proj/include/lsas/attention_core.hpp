#pragma once

// Sub-attention chain: a stack of per-channel affine maps applied to the
// pre-sigmoid channel logits of an attention module, whose sigmoids are
// multiplied back into a single channel multiplier.
//
//   forward stage     v_i  = v_{i-1} * gamma_i + beta_i          (i = 1..n)
//   composition stage v'_n = sigmoid(v_n)
//                     v'_i = sigmoid(v_i) * v'_{i+1}              (i = n-1..0)
//
// Everything here operates on one channel vector; the batched layer that
// wraps a base attention module lives in lsas_module.hpp.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lsas/errors.hpp"

namespace lsas {

template <class T>
using ChannelVector = std::vector<T>;

template <class T>
inline T sigmoid(T x) noexcept {
  // Branch on sign so exp() never overflows.
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Selection gate threshold. The gate is open for a channel count c iff c > mu.
struct GateConfig {
  int mu = 128;

  [[nodiscard]] bool is_open(int channels) const noexcept { return channels > mu; }
  void validate() const {
    if (mu < 0) throw InvalidArgument("gate threshold mu must be >= 0, got " + std::to_string(mu));
  }
};

template <class T>
struct AffinePair {
  ChannelVector<T> gamma;
  ChannelVector<T> beta;
};

template <class T>
class SubAttentionChain {
 public:
  SubAttentionChain() = default;
  SubAttentionChain(int channels, std::vector<AffinePair<T>> levels) : channels_(channels), levels_(std::move(levels)) {
    validate();
  }

  /// gamma = 1, beta = 0 at every level.
  static SubAttentionChain identity(int order, int channels) {
    if (order < 0) throw InvalidArgument("sub-attention order must be >= 0");
    std::vector<AffinePair<T>> levels(static_cast<std::size_t>(order));
    for (auto& p : levels) {
      p.gamma.assign(static_cast<std::size_t>(channels), T(1));
      p.beta.assign(static_cast<std::size_t>(channels), T(0));
    }
    return SubAttentionChain(channels, std::move(levels));
  }

  [[nodiscard]] int order() const noexcept { return static_cast<int>(levels_.size()); }
  [[nodiscard]] int channels() const noexcept { return channels_; }

  // Levels are 1-based to match v_i indexing: level(1) holds (gamma_1, beta_1).
  [[nodiscard]] const AffinePair<T>& level(int i) const { return levels_.at(static_cast<std::size_t>(i - 1)); }
  [[nodiscard]] AffinePair<T>& level(int i) { return levels_.at(static_cast<std::size_t>(i - 1)); }
  [[nodiscard]] const std::vector<AffinePair<T>>& levels() const noexcept { return levels_; }

  void validate() const {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (static_cast<int>(levels_[i].gamma.size()) != channels_ ||
          static_cast<int>(levels_[i].beta.size()) != channels_) {
        throw InvalidArgument("sub-attention level " + std::to_string(i + 1) + " has parameter length " +
                              std::to_string(levels_[i].gamma.size()) + "/" + std::to_string(levels_[i].beta.size()) +
                              ", expected " + std::to_string(channels_));
      }
    }
  }

 private:
  int channels_ = 0;
  std::vector<AffinePair<T>> levels_;
};

/// Returns v when c(v) > mu, otherwise the all-ones multiplier of the same length.
template <class T>
ChannelVector<T> selection_gate(std::span<const T> v, const GateConfig& gate) {
  if (gate.is_open(static_cast<int>(v.size()))) return ChannelVector<T>(v.begin(), v.end());
  return ChannelVector<T>(v.size(), T(1));
}

/// Returns [v0, v1, ..., vn].
template <class T>
std::vector<ChannelVector<T>> chain_forward(std::span<const T> v0, const SubAttentionChain<T>& chain) {
  if (chain.order() > 0 && static_cast<int>(v0.size()) != chain.channels()) {
    throw InvalidArgument("chain_forward: input has " + std::to_string(v0.size()) + " channels, chain expects " +
                          std::to_string(chain.channels()));
  }
  std::vector<ChannelVector<T>> vs;
  vs.reserve(static_cast<std::size_t>(chain.order()) + 1);
  vs.emplace_back(v0.begin(), v0.end());
  for (int i = 1; i <= chain.order(); ++i) {
    const auto& [gamma, beta] = chain.level(i);
    const auto& prev = vs.back();
    ChannelVector<T> next(prev.size());
    for (std::size_t c = 0; c < prev.size(); ++c) next[c] = prev[c] * gamma[c] + beta[c];
    vs.push_back(std::move(next));
  }
  return vs;
}

/// Composition stage: v'_0 = prod_i sigmoid(v_i), evaluated from the deepest level down.
template <class T>
ChannelVector<T> chain_compose(const std::vector<ChannelVector<T>>& vs) {
  if (vs.empty()) throw InvalidArgument("chain_compose: empty chain output");
  const std::size_t channels = vs.front().size();
  for (const auto& v : vs) {
    if (v.size() != channels) throw InvalidArgument("chain_compose: chain levels differ in length");
  }
  ChannelVector<T> acc(channels);
  const auto& last = vs.back();
  for (std::size_t c = 0; c < channels; ++c) acc[c] = sigmoid(last[c]);
  for (std::size_t i = vs.size() - 1; i-- > 0;) {
    for (std::size_t c = 0; c < channels; ++c) acc[c] = sigmoid(vs[i][c]) * acc[c];
  }
  return acc;
}

template <class T>
struct ChainGradients {
  ChannelVector<T> grad_v0;
  std::vector<ChannelVector<T>> grad_gammas;  // index i-1 holds dL/dgamma_i
  std::vector<ChannelVector<T>> grad_betas;
};

/// Gradients of <upstream, chain_compose(chain_forward(v0, chain))> with respect
/// to v0 and every (gamma_i, beta_i).
template <class T>
ChainGradients<T> chain_gradients(std::span<const T> v0, const SubAttentionChain<T>& chain,
                                  std::span<const T> upstream) {
  const std::size_t channels = v0.size();
  if (upstream.size() != channels) {
    throw InvalidArgument("chain_gradients: upstream length " + std::to_string(upstream.size()) +
                          " != input length " + std::to_string(channels));
  }
  const auto vs = chain_forward(v0, chain);
  const int n = chain.order();

  ChannelVector<T> product(channels, T(1));
  std::vector<ChannelVector<T>> sig(vs.size(), ChannelVector<T>(channels));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      sig[i][c] = sigmoid(vs[i][c]);
      product[c] *= sig[i][c];
    }
  }

  ChainGradients<T> out;
  out.grad_gammas.assign(static_cast<std::size_t>(n), ChannelVector<T>(channels));
  out.grad_betas.assign(static_cast<std::size_t>(n), ChannelVector<T>(channels));

  // total[c] = dL/dv_i, accumulated from level n down to 0.
  ChannelVector<T> total(channels, T(0));
  for (int i = n; i >= 0; --i) {
    const auto& s = sig[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < channels; ++c) {
      T carried = T(0);
      if (i < n) carried = total[c] * chain.level(i + 1).gamma[c];
      total[c] = upstream[c] * product[c] * (T(1) - s[c]) + carried;
    }
    if (i >= 1) {
      const auto& prev = vs[static_cast<std::size_t>(i - 1)];
      auto& gg = out.grad_gammas[static_cast<std::size_t>(i - 1)];
      auto& gb = out.grad_betas[static_cast<std::size_t>(i - 1)];
      for (std::size_t c = 0; c < channels; ++c) {
        gg[c] = total[c] * prev[c];
        gb[c] = total[c];
      }
    }
  }
  out.grad_v0 = std::move(total);
  return out;
}

}  // namespace lsas

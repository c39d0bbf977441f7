#include "lsas/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lsas/blas.hpp"

namespace lsas {
namespace {

int conv_out_extent(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

template <class T>
void im2col(const T* src, int channels, int height, int width, int kernel, int stride, int padding, int out_h,
            int out_w, T* col) {
  const int hw = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        T* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * hw;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - padding + ki;
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* line = plane + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - padding + kj;
            dst[ow] = (iw >= 0 && iw < width) ? line[iw] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride, int padding, int out_h,
            int out_w, T* dst) {
  const int hw = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const T* row = col + static_cast<std::size_t>((c * kernel + ki) * kernel + kj) * hw;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= height) continue;
          T* line = plane + static_cast<std::size_t>(ih) * width;
          const T* src = row + oh * out_w;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - padding + kj;
            if (iw >= 0 && iw < width) line[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
void fan_in_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

template <class T>
void scale_channels(Tensor<T>& x, const Tensor<T>& scale) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  T* p = x.data();
  for (int i = 0; i < n * c; ++i) {
    const T s = scale[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < hw; ++j) p[j] *= s;
    p += hw;
  }
}

template <class T>
Tensor<T> channel_dot(const Tensor<T>& a, const Tensor<T>& b) {
  const int n = a.dim(0), c = a.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor<T> out({n, c});
  const T* pa = a.data();
  const T* pb = b.data();
  for (int i = 0; i < n * c; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < hw; ++j) acc += pa[j] * pb[j];
    out[static_cast<std::size_t>(i)] = acc;
    pa += hw;
    pb += hw;
  }
  return out;
}

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_({out_channels, in_channels, kernel, kernel}),
      grad_weight_({out_channels, in_channels, kernel, kernel}) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
    throw ConfigError("invalid convolution geometry");
  }
  fan_in_uniform(weight_, in_channels * kernel * kernel, rng);
  if (has_bias_) {
    bias_ = Tensor<T>({out_channels});
    grad_bias_ = Tensor<T>({out_channels});
  }
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "Conv2d");
  if (x.dim(1) != in_channels_) {
    throw InvalidArgument("Conv2d: expected " + std::to_string(in_channels_) + " input channels, got " +
                          std::to_string(x.dim(1)));
  }
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_extent(h, kernel_, stride_, padding_);
  const int ow = conv_out_extent(w, kernel_, stride_, padding_);
  if (oh <= 0 || ow <= 0) throw InvalidArgument("Conv2d: input " + shape_string(x.shape()) + " too small");
  const int k = in_channels_ * kernel_ * kernel_;
  const int hw = oh * ow;

  Tensor<T> y({n, out_channels_, oh, ow});
  std::vector<T> col;
  if (!is_pointwise()) col.resize(static_cast<std::size_t>(k) * hw);
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels_) * hw;
  for (int i = 0; i < n; ++i) {
    const T* src = x.data() + i * in_stride;
    const T* b = src;
    if (!is_pointwise()) {
      im2col(src, in_channels_, h, w, kernel_, stride_, padding_, oh, ow, col.data());
      b = col.data();
    }
    T* dst = y.data() + i * out_stride;
    gemm<T>(false, false, out_channels_, hw, k, T(1), weight_.data(), k, b, hw, T(0), dst, hw);
    if (has_bias_) {
      for (int o = 0; o < out_channels_; ++o) {
        T* plane = dst + static_cast<std::size_t>(o) * hw;
        for (int j = 0; j < hw; ++j) plane[j] += bias_[static_cast<std::size_t>(o)];
      }
    }
  }
  if (keeps_cache(mode)) input_ = x;
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  if (x.empty()) throw InvalidArgument("Conv2d::backward called without a cached forward pass");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  const int k = in_channels_ * kernel_ * kernel_;
  const int hw = oh * ow;

  Tensor<T> dx(x.shape());
  std::vector<T> col, dcol;
  if (!is_pointwise()) {
    col.resize(static_cast<std::size_t>(k) * hw);
    dcol.resize(col.size());
  }
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels_) * hw;
  for (int i = 0; i < n; ++i) {
    const T* src = x.data() + i * in_stride;
    const T* dy = grad_out.data() + i * out_stride;
    const T* b = src;
    if (!is_pointwise()) {
      im2col(src, in_channels_, h, w, kernel_, stride_, padding_, oh, ow, col.data());
      b = col.data();
    }
    gemm<T>(false, true, out_channels_, k, hw, T(1), dy, hw, b, hw, T(1), grad_weight_.data(), k);
    T* dxi = dx.data() + i * in_stride;
    if (is_pointwise()) {
      gemm<T>(true, false, k, hw, out_channels_, T(1), weight_.data(), k, dy, hw, T(0), dxi, hw);
    } else {
      gemm<T>(true, false, k, hw, out_channels_, T(1), weight_.data(), k, dy, hw, T(0), dcol.data(), hw);
      col2im(dcol.data(), in_channels_, h, w, kernel_, stride_, padding_, oh, ow, dxi);
    }
    if (has_bias_) {
      for (int o = 0; o < out_channels_; ++o) {
        const T* plane = dy + static_cast<std::size_t>(o) * hw;
        T acc = T(0);
        for (int j = 0; j < hw; ++j) acc += plane[j];
        grad_bias_[static_cast<std::size_t>(o)] += acc;
      }
    }
  }
  return dx;
}

template <class T>
void Conv2d<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_});
  if (has_bias_) out.push_back({join_name(prefix, "bias"), &bias_, &grad_bias_});
}

// ---------------------------------------------------------------- BatchNorm2d

template <class T>
BatchNorm2d<T>::BatchNorm2d(int channels, T eps, T momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      weight_({channels}, T(1)),
      grad_weight_({channels}),
      bias_({channels}),
      grad_bias_({channels}),
      running_mean_({channels}),
      running_var_({channels}, T(1)) {}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if ((x.rank() != 4 && x.rank() != 2) || x.dim(1) != channels_) {
    throw InvalidArgument("BatchNorm2d: expected (N, " + std::to_string(channels_) + ", ...) input, got " +
                          shape_string(x.shape()));
  }
  const int n = x.dim(0);
  const std::size_t hw = x.rank() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  const bool train = mode == Mode::Train;

  std::vector<T> mean(static_cast<std::size_t>(channels_)), inv_std(static_cast<std::size_t>(channels_));
  for (int c = 0; c < channels_; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (train) {
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) sum += p[j];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = p[j] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[cu] = static_cast<T>(mu);
      inv_std[cu] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      running_mean_[cu] = (T(1) - momentum_) * running_mean_[cu] + momentum_ * static_cast<T>(mu);
      running_var_[cu] = (T(1) - momentum_) * running_var_[cu] + momentum_ * static_cast<T>(unbiased);
    } else {
      mean[cu] = running_mean_[cu];
      inv_std[cu] = T(1) / std::sqrt(running_var_[cu] + eps_);
    }
  }

  Tensor<T> y(x.shape());
  const bool cache = keeps_cache(mode);
  if (cache) normalized_ = Tensor<T>(x.shape());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < channels_; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * hw;
      const T* p = x.data() + off;
      T* q = y.data() + off;
      const T m = mean[cu], s = inv_std[cu], g = weight_[cu], b = bias_[cu];
      if (cache) {
        T* xh = normalized_.data() + off;
        for (std::size_t j = 0; j < hw; ++j) {
          xh[j] = (p[j] - m) * s;
          q[j] = g * xh[j] + b;
        }
      } else {
        for (std::size_t j = 0; j < hw; ++j) q[j] = g * ((p[j] - m) * s) + b;
      }
    }
  }
  if (cache) {
    inv_std_ = std::move(inv_std);
    batch_stats_ = train;
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  if (normalized_.empty()) throw InvalidArgument("BatchNorm2d::backward called without a cached forward pass");
  const int n = grad_out.dim(0);
  const std::size_t hw = grad_out.rank() == 4 ? static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3) : 1;
  const double count = static_cast<double>(n) * static_cast<double>(hw);
  Tensor<T> dx(grad_out.shape());
  for (int c = 0; c < channels_; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * hw;
      const T* dy = grad_out.data() + off;
      const T* xh = normalized_.data() + off;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += dy[j];
        sum_dy_xh += static_cast<double>(dy[j]) * xh[j];
      }
    }
    grad_bias_[cu] += static_cast<T>(sum_dy);
    grad_weight_[cu] += static_cast<T>(sum_dy_xh);
    const T scale = weight_[cu] * inv_std_[cu];
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * hw;
      const T* dy = grad_out.data() + off;
      const T* xh = normalized_.data() + off;
      T* d = dx.data() + off;
      if (batch_stats_) {
        for (std::size_t j = 0; j < hw; ++j) d[j] = scale * (dy[j] - mean_dy - xh[j] * mean_dy_xh);
      } else {
        for (std::size_t j = 0; j < hw; ++j) d[j] = scale * dy[j];
      }
    }
  }
  return dx;
}

template <class T>
void BatchNorm2d<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_});
  out.push_back({join_name(prefix, "bias"), &bias_, &grad_bias_});
}

template <class T>
void BatchNorm2d<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  out.push_back({join_name(prefix, "running_mean"), &running_mean_});
  out.push_back({join_name(prefix, "running_var"), &running_var_});
}

// ---------------------------------------------------------------- ReLU

template <class T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y(x.shape());
  const bool cache = keeps_cache(mode);
  if (cache) {
    mask_.resize(x.size());
    shape_ = x.shape();
  }
  const T* p = x.data();
  T* q = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = p[i] > T(0);
    q[i] = on ? p[i] : T(0);
    if (cache) mask_[i] = on;
  }
  return y;
}

template <class T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  if (mask_.size() != grad_out.size()) throw InvalidArgument("ReLU::backward shape mismatch with cached forward");
  Tensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < grad_out.size(); ++i) dx[i] = mask_[i] ? grad_out[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <class T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "MaxPool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_extent(h, kernel_, stride_, padding_);
  const int ow = conv_out_extent(w, kernel_, stride_, padding_);
  Tensor<T> y({n, c, oh, ow});
  const bool cache = keeps_cache(mode);
  if (cache) {
    argmax_.resize(y.size());
    input_shape_ = x.shape();
  }
  std::size_t o = 0;
  for (int i = 0; i < n * c; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * h * w;
    for (int r = 0; r < oh; ++r) {
      for (int s = 0; s < ow; ++s, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t arg = base;
        for (int ki = 0; ki < kernel_; ++ki) {
          const int ih = r * stride_ - padding_ + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < kernel_; ++kj) {
            const int iw = s * stride_ - padding_ + kj;
            if (iw < 0 || iw >= w) continue;
            const std::size_t idx = base + static_cast<std::size_t>(ih) * w + iw;
            if (x[idx] > best) {
              best = x[idx];
              arg = idx;
            }
          }
        }
        y[o] = best;
        if (cache) argmax_[o] = arg;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(input_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <class T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 4, "GlobalAvgPool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (hw == 0) throw InvalidArgument("GlobalAvgPool: empty spatial extent");
  Tensor<T> y({n, c});
  const T* p = x.data();
  for (int i = 0; i < n * c; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < hw; ++j) acc += p[j];
    y[static_cast<std::size_t>(i)] = acc / static_cast<T>(hw);
    p += hw;
  }
  if (keeps_cache(mode)) input_shape_ = x.shape();
  return y;
}

template <class T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(input_shape_);
  const std::size_t hw = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  T* p = dx.data();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const T g = grad_out[i] / static_cast<T>(hw);
    std::fill(p, p + hw, g);
    p += hw;
  }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <class T>
Linear<T>::Linear(int in_features, int out_features, bool bias, Rng& rng, T init_bound)
    : in_(in_features),
      out_(out_features),
      has_bias_(bias),
      weight_({out_features, in_features}),
      grad_weight_({out_features, in_features}) {
  if (in_features <= 0 || out_features <= 0) throw ConfigError("invalid linear layer size");
  if (init_bound < T(0)) {
    fan_in_uniform(weight_, in_features, rng);
  } else {
    std::uniform_real_distribution<double> dist(-static_cast<double>(init_bound), static_cast<double>(init_bound));
    for (auto& v : weight_.values()) v = static_cast<T>(dist(rng));
  }
  if (has_bias_) {
    bias_ = Tensor<T>({out_features});
    grad_bias_ = Tensor<T>({out_features});
  }
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank(x, 2, "Linear");
  if (x.dim(1) != in_) {
    throw InvalidArgument("Linear: expected " + std::to_string(in_) + " features, got " + std::to_string(x.dim(1)));
  }
  const int n = x.dim(0);
  Tensor<T> y({n, out_});
  gemm<T>(false, true, n, out_, in_, T(1), x.data(), in_, weight_.data(), in_, T(0), y.data(), out_);
  if (has_bias_) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < out_; ++o) y[static_cast<std::size_t>(i) * out_ + o] += bias_[static_cast<std::size_t>(o)];
    }
  }
  if (keeps_cache(mode)) input_ = x;
  return y;
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  if (input_.empty()) throw InvalidArgument("Linear::backward called without a cached forward pass");
  const int n = grad_out.dim(0);
  gemm<T>(true, false, out_, in_, n, T(1), grad_out.data(), out_, input_.data(), in_, T(1), grad_weight_.data(), in_);
  if (has_bias_) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < out_; ++o) grad_bias_[static_cast<std::size_t>(o)] += grad_out[static_cast<std::size_t>(i) * out_ + o];
    }
  }
  Tensor<T> dx({n, in_});
  gemm<T>(false, false, n, in_, out_, T(1), grad_out.data(), out_, weight_.data(), in_, T(0), dx.data(), in_);
  return dx;
}

template <class T>
void Linear<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_, &grad_weight_});
  if (has_bias_) out.push_back({join_name(prefix, "bias"), &bias_, &grad_bias_});
}

#define LSAS_INSTANTIATE_LAYERS(T)                                   \
  template class Conv2d<T>;                                          \
  template class BatchNorm2d<T>;                                     \
  template class ReLU<T>;                                            \
  template class MaxPool2d<T>;                                       \
  template class GlobalAvgPool<T>;                                   \
  template class Linear<T>;                                          \
  template void fan_in_uniform<T>(Tensor<T>&, int, Rng&);            \
  template void scale_channels<T>(Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> channel_dot<T>(const Tensor<T>&, const Tensor<T>&);

LSAS_INSTANTIATE_LAYERS(float)
LSAS_INSTANTIATE_LAYERS(double)

#undef LSAS_INSTANTIATE_LAYERS

}  // namespace lsas

#include "lsas/backbone.hpp"

#include <cmath>

namespace lsas {

void ModelConfig::validate() const {
  if (!is_cifar_family() && !is_imagenet_family()) {
    throw ConfigError("unsupported depth " + std::to_string(depth) + " (expected 83, 164, 245, 34 or 50)");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (input_height < 1 || input_width < 1) throw ConfigError("input size must be positive");
  if (attention != AttentionKind::None) {
    if (lsas_order < 0) throw ConfigError("LSAS order must be >= 0");
    if (gate_mu < 0) throw ConfigError("gate threshold mu must be >= 0");
  }
}

namespace {

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  T* p = a.data();
  const T* q = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) p[i] += q[i];
}

template <class T>
std::unique_ptr<LSASModule<T>> make_block_attention(const ModelConfig& cfg, int channels, Rng& rng) {
  if (cfg.attention == AttentionKind::None) return nullptr;
  const GateConfig gate{cfg.gate_mu};
  // Structural gate: blocks at or below the threshold get no module at all.
  if (!gate.is_open(channels)) return nullptr;
  AttentionOptions opts;
  opts.se_reduction = cfg.se_reduction;
  opts.eca_kernel = cfg.eca_kernel;
  return std::make_unique<LSASModule<T>>(make_attention<T>(cfg.attention, channels, opts, rng),
                                         SubAttentionChain<T>::identity(cfg.lsas_order, channels), gate);
}

}  // namespace

// ---------------------------------------------------------------- Model

template <class T>
Tensor<T> Model<T>::forward_range(const Tensor<T>& x, std::size_t first, std::size_t last, Mode mode) {
  if (first > last || last > layers_.size()) throw InvalidArgument("Model::forward_range: bad layer range");
  Tensor<T> h = x;
  for (std::size_t i = first; i < last; ++i) h = layers_[i].second->forward(h, mode);
  return h;
}

template <class T>
Tensor<T> Model<T>::backward_range(const Tensor<T>& grad, std::size_t first, std::size_t last) {
  if (first > last || last > layers_.size()) throw InvalidArgument("Model::backward_range: bad layer range");
  Tensor<T> g = grad;
  for (std::size_t i = last; i-- > first;) g = layers_[i].second->backward(g);
  return g;
}

template <class T>
ParamList<T> Model<T>::parameters() {
  ParamList<T> out;
  for (auto& [name, layer] : layers_) layer->parameters(name, out);
  return out;
}

template <class T>
BufferList<T> Model<T>::buffers() {
  BufferList<T> out;
  for (auto& [name, layer] : layers_) layer->buffers(name, out);
  return out;
}

template <class T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.grad->fill(T(0));
}

template <class T>
std::size_t Model<T>::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].first == name) return i;
  }
  throw InvalidArgument("unknown layer '" + name + "'");
}

template <class T>
std::string Model<T>::last_block_name() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i].first.rfind("stage", 0) == 0) return layers_[i].first;
  }
  if (layers_.size() >= 2) return layers_[layers_.size() - 2].first;
  throw InvalidArgument("model has no feature layers");
}

template <class T>
std::size_t count_parameters(Model<T>& model) {
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.value->size();
  return total;
}

template <class T>
std::vector<ModuleCount> count_parameters_by_module(Model<T>& model) {
  std::vector<ModuleCount> rows;
  std::size_t attention = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    ParamList<T> params;
    model.layer(i).parameters(model.layer_name(i), params);
    ModuleCount row{model.layer_name(i), 0};
    for (const auto& p : params) {
      row.parameters += p.value->size();
      if (p.name.find(".attention.") != std::string::npos) attention += p.value->size();
    }
    rows.push_back(std::move(row));
  }
  rows.push_back({"attention", attention});
  return rows;
}

// ---------------------------------------------------------------- PreActBottleneck

template <class T>
PreActBottleneck<T>::PreActBottleneck(int in_channels, int planes, int stride,
                                      std::unique_ptr<LSASModule<T>> attention, Rng& rng)
    : bn1_(in_channels),
      conv1_(in_channels, planes, 1, 1, 0, false, rng),
      bn2_(planes),
      conv2_(planes, planes, 3, stride, 1, false, rng),
      bn3_(planes),
      conv3_(planes, planes * kExpansion, 1, 1, 0, false, rng),
      attention_(std::move(attention)) {
  if (stride != 1 || in_channels != planes * kExpansion) {
    shortcut_ = std::make_unique<Conv2d<T>>(in_channels, planes * kExpansion, 1, stride, 0, false, rng);
  }
}

template <class T>
Tensor<T> PreActBottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  const Tensor<T> a = relu1_.forward(bn1_.forward(x, mode), mode);
  Tensor<T> h = conv1_.forward(a, mode);
  h = conv2_.forward(relu2_.forward(bn2_.forward(h, mode), mode), mode);
  h = conv3_.forward(relu3_.forward(bn3_.forward(h, mode), mode), mode);
  if (attention_) h = attention_->forward(h, mode);
  if (shortcut_) {
    add_inplace(h, shortcut_->forward(a, mode));
  } else {
    add_inplace(h, x);
  }
  return h;
}

template <class T>
Tensor<T> PreActBottleneck<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = attention_ ? attention_->backward(grad_out) : grad_out;
  g = bn3_.backward(relu3_.backward(conv3_.backward(g)));
  g = bn2_.backward(relu2_.backward(conv2_.backward(g)));
  Tensor<T> da = conv1_.backward(g);
  if (shortcut_) add_inplace(da, shortcut_->backward(grad_out));
  Tensor<T> dx = bn1_.backward(relu1_.backward(da));
  if (!shortcut_) add_inplace(dx, grad_out);
  return dx;
}

template <class T>
void PreActBottleneck<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  bn1_.parameters(join_name(prefix, "bn1"), out);
  conv1_.parameters(join_name(prefix, "conv1"), out);
  bn2_.parameters(join_name(prefix, "bn2"), out);
  conv2_.parameters(join_name(prefix, "conv2"), out);
  bn3_.parameters(join_name(prefix, "bn3"), out);
  conv3_.parameters(join_name(prefix, "conv3"), out);
  if (shortcut_) shortcut_->parameters(join_name(prefix, "shortcut"), out);
  if (attention_) attention_->parameters(join_name(prefix, "attention"), out);
}

template <class T>
void PreActBottleneck<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  bn1_.buffers(join_name(prefix, "bn1"), out);
  bn2_.buffers(join_name(prefix, "bn2"), out);
  bn3_.buffers(join_name(prefix, "bn3"), out);
  if (attention_) attention_->buffers(join_name(prefix, "attention"), out);
}

// ---------------------------------------------------------------- BasicBlock

template <class T>
BasicBlock<T>::BasicBlock(int in_channels, int planes, int stride, std::unique_ptr<LSASModule<T>> attention, Rng& rng)
    : conv1_(in_channels, planes, 3, stride, 1, false, rng),
      bn1_(planes),
      conv2_(planes, planes, 3, 1, 1, false, rng),
      bn2_(planes),
      attention_(std::move(attention)) {
  if (stride != 1 || in_channels != planes) {
    shortcut_conv_ = std::make_unique<Conv2d<T>>(in_channels, planes, 1, stride, 0, false, rng);
    shortcut_bn_ = std::make_unique<BatchNorm2d<T>>(planes);
  }
}

template <class T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
  h = bn2_.forward(conv2_.forward(h, mode), mode);
  if (attention_) h = attention_->forward(h, mode);
  if (shortcut_conv_) {
    add_inplace(h, shortcut_bn_->forward(shortcut_conv_->forward(x, mode), mode));
  } else {
    add_inplace(h, x);
  }
  return relu_out_.forward(h, mode);
}

template <class T>
Tensor<T> BasicBlock<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T> g_sum = relu_out_.backward(grad_out);
  Tensor<T> g = attention_ ? attention_->backward(g_sum) : g_sum;
  g = conv2_.backward(bn2_.backward(g));
  Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(g)));
  if (shortcut_conv_) {
    add_inplace(dx, shortcut_conv_->backward(shortcut_bn_->backward(g_sum)));
  } else {
    add_inplace(dx, g_sum);
  }
  return dx;
}

template <class T>
void BasicBlock<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  conv1_.parameters(join_name(prefix, "conv1"), out);
  bn1_.parameters(join_name(prefix, "bn1"), out);
  conv2_.parameters(join_name(prefix, "conv2"), out);
  bn2_.parameters(join_name(prefix, "bn2"), out);
  if (shortcut_conv_) {
    shortcut_conv_->parameters(join_name(prefix, "shortcut.conv"), out);
    shortcut_bn_->parameters(join_name(prefix, "shortcut.bn"), out);
  }
  if (attention_) attention_->parameters(join_name(prefix, "attention"), out);
}

template <class T>
void BasicBlock<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  bn1_.buffers(join_name(prefix, "bn1"), out);
  bn2_.buffers(join_name(prefix, "bn2"), out);
  if (shortcut_bn_) shortcut_bn_->buffers(join_name(prefix, "shortcut.bn"), out);
  if (attention_) attention_->buffers(join_name(prefix, "attention"), out);
}

// ---------------------------------------------------------------- Bottleneck

template <class T>
Bottleneck<T>::Bottleneck(int in_channels, int planes, int stride, std::unique_ptr<LSASModule<T>> attention, Rng& rng)
    : conv1_(in_channels, planes, 1, 1, 0, false, rng),
      bn1_(planes),
      conv2_(planes, planes, 3, stride, 1, false, rng),
      bn2_(planes),
      conv3_(planes, planes * kExpansion, 1, 1, 0, false, rng),
      bn3_(planes * kExpansion),
      attention_(std::move(attention)) {
  if (stride != 1 || in_channels != planes * kExpansion) {
    shortcut_conv_ = std::make_unique<Conv2d<T>>(in_channels, planes * kExpansion, 1, stride, 0, false, rng);
    shortcut_bn_ = std::make_unique<BatchNorm2d<T>>(planes * kExpansion);
  }
}

template <class T>
Tensor<T> Bottleneck<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
  h = relu2_.forward(bn2_.forward(conv2_.forward(h, mode), mode), mode);
  h = bn3_.forward(conv3_.forward(h, mode), mode);
  if (attention_) h = attention_->forward(h, mode);
  if (shortcut_conv_) {
    add_inplace(h, shortcut_bn_->forward(shortcut_conv_->forward(x, mode), mode));
  } else {
    add_inplace(h, x);
  }
  return relu_out_.forward(h, mode);
}

template <class T>
Tensor<T> Bottleneck<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T> g_sum = relu_out_.backward(grad_out);
  Tensor<T> g = attention_ ? attention_->backward(g_sum) : g_sum;
  g = conv3_.backward(bn3_.backward(g));
  g = conv2_.backward(bn2_.backward(relu2_.backward(g)));
  Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(g)));
  if (shortcut_conv_) {
    add_inplace(dx, shortcut_conv_->backward(shortcut_bn_->backward(g_sum)));
  } else {
    add_inplace(dx, g_sum);
  }
  return dx;
}

template <class T>
void Bottleneck<T>::parameters(const std::string& prefix, ParamList<T>& out) {
  conv1_.parameters(join_name(prefix, "conv1"), out);
  bn1_.parameters(join_name(prefix, "bn1"), out);
  conv2_.parameters(join_name(prefix, "conv2"), out);
  bn2_.parameters(join_name(prefix, "bn2"), out);
  conv3_.parameters(join_name(prefix, "conv3"), out);
  bn3_.parameters(join_name(prefix, "bn3"), out);
  if (shortcut_conv_) {
    shortcut_conv_->parameters(join_name(prefix, "shortcut.conv"), out);
    shortcut_bn_->parameters(join_name(prefix, "shortcut.bn"), out);
  }
  if (attention_) attention_->parameters(join_name(prefix, "attention"), out);
}

template <class T>
void Bottleneck<T>::buffers(const std::string& prefix, BufferList<T>& out) {
  bn1_.buffers(join_name(prefix, "bn1"), out);
  bn2_.buffers(join_name(prefix, "bn2"), out);
  bn3_.buffers(join_name(prefix, "bn3"), out);
  if (shortcut_bn_) shortcut_bn_->buffers(join_name(prefix, "shortcut.bn"), out);
  if (attention_) attention_->buffers(join_name(prefix, "attention"), out);
}

// ---------------------------------------------------------------- build_model

namespace {

template <class T>
void build_cifar(Model<T>& model, const ModelConfig& cfg, Rng& rng) {
  const int blocks = (cfg.depth - 2) / 9;
  auto stem = std::make_unique<Sequential<T>>();
  stem->add("conv", std::make_unique<Conv2d<T>>(3, 16, 3, 1, 1, false, rng));
  model.add("stem", std::move(stem));

  int in_channels = 16;
  const int planes[3] = {16, 32, 64};
  const int strides[3] = {1, 2, 2};
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < blocks; ++b) {
      const int out = planes[s] * PreActBottleneck<T>::kExpansion;
      const int stride = b == 0 ? strides[s] : 1;
      model.add("stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                std::make_unique<PreActBottleneck<T>>(in_channels, planes[s], stride,
                                                      make_block_attention<T>(cfg, out, rng), rng));
      in_channels = out;
    }
  }
  auto head = std::make_unique<Sequential<T>>();
  head->add("bn", std::make_unique<BatchNorm2d<T>>(in_channels));
  head->add("relu", std::make_unique<ReLU<T>>());
  head->add("pool", std::make_unique<GlobalAvgPool<T>>());
  head->add("fc", std::make_unique<Linear<T>>(in_channels, cfg.num_classes, true, rng,
                                               static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_channels)))));
  model.add("head", std::move(head));
}

template <class T, class Block>
void build_imagenet_stages(Model<T>& model, const ModelConfig& cfg, Rng& rng, int& in_channels) {
  const int counts[4] = {3, 4, 6, 3};
  const int planes[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < counts[s]; ++b) {
      const int out = planes[s] * Block::kExpansion;
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      model.add("stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                std::make_unique<Block>(in_channels, planes[s], stride, make_block_attention<T>(cfg, out, rng), rng));
      in_channels = out;
    }
  }
}

template <class T>
void build_imagenet(Model<T>& model, const ModelConfig& cfg, Rng& rng) {
  auto stem = std::make_unique<Sequential<T>>();
  stem->add("conv", std::make_unique<Conv2d<T>>(3, 64, 7, 2, 3, false, rng));
  stem->add("bn", std::make_unique<BatchNorm2d<T>>(64));
  stem->add("relu", std::make_unique<ReLU<T>>());
  stem->add("pool", std::make_unique<MaxPool2d<T>>(3, 2, 1));
  model.add("stem", std::move(stem));

  int in_channels = 64;
  if (cfg.depth == 34) {
    build_imagenet_stages<T, BasicBlock<T>>(model, cfg, rng, in_channels);
  } else {
    build_imagenet_stages<T, Bottleneck<T>>(model, cfg, rng, in_channels);
  }
  auto head = std::make_unique<Sequential<T>>();
  head->add("pool", std::make_unique<GlobalAvgPool<T>>());
  head->add("fc", std::make_unique<Linear<T>>(in_channels, cfg.num_classes, true, rng,
                                               static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_channels)))));
  model.add("head", std::move(head));
}

}  // namespace

template <class T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model<T> model(cfg);
  if (cfg.is_cifar_family()) {
    build_cifar(model, cfg, rng);
  } else {
    build_imagenet(model, cfg, rng);
  }
  return model;
}

template class Model<float>;
template class Model<double>;
template class PreActBottleneck<float>;
template class PreActBottleneck<double>;
template class BasicBlock<float>;
template class BasicBlock<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;
template Model<float> build_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> build_model<double>(const ModelConfig&, std::uint64_t);
template std::size_t count_parameters<float>(Model<float>&);
template std::size_t count_parameters<double>(Model<double>&);
template std::vector<ModuleCount> count_parameters_by_module<float>(Model<float>&);
template std::vector<ModuleCount> count_parameters_by_module<double>(Model<double>&);

}  // namespace lsas

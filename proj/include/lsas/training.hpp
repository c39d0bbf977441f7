#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lsas/backbone.hpp"
#include "lsas/checkpoint.hpp"
#include "lsas/data.hpp"

namespace lsas {

struct TrainConfig {
  std::string dataset = "cifar10";
  ModelConfig model;
  int epochs = 164;
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> lr_milestones{81, 122};  // 1-based epochs at which lr is multiplied by lr_gamma
  double lr_gamma = 0.1;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::size_t train_subset = 0;  // 0 keeps the full split
  std::size_t test_subset = 0;
  std::filesystem::path resume;  // checkpoint to continue from

  void validate() const;
};

Json to_json(const TrainConfig& cfg);

/// Learning rate in effect during 1-based `epoch`.
double learning_rate(const TrainConfig& cfg, int epoch);

/// SGD with momentum and L2 weight decay applied to every trainable tensor:
///   g = grad + wd * p;  buf = m * buf + g (buf = g on the first step);  p -= lr * buf
template <class T>
class SGD {
 public:
  SGD(ParamList<T> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

  [[nodiscard]] const ParamList<T>& params() const noexcept { return params_; }
  /// Momentum buffers keyed "optim.momentum.<param>".
  [[nodiscard]] std::map<std::string, const Tensor<T>*> state() const;
  void load_state(const CheckpointArchive& archive);
  [[nodiscard]] bool started() const noexcept { return started_; }

 private:
  ParamList<T> params_;
  std::vector<Tensor<T>> buffers_;
  double momentum_, weight_decay_;
  bool started_ = false;
};

/// Mean softmax cross-entropy over the batch; writes d loss / d logits if `grad`.
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  std::vector<EpochRecord> history;
  double best_acc = 0.0;
};

/// Trains on already-loaded splits. Writes history.csv, best.ckpt and
/// final.ckpt under a fresh `run_<NNN>` directory of cfg.output_dir (or under
/// the resumed checkpoint's directory).
template <class T>
TrainResult train(const TrainConfig& cfg, const DataSplits& data, std::ostream* log = nullptr);

/// Top-1 accuracy in percent, no augmentation.
template <class T>
double evaluate(Model<T>& model, const Dataset& data, const DatasetSpec& spec, int batch_size = 128);

struct BenchResult {
  double fps = 0.0;  // median over runs
  int batch_size = 0;
  int warmup_batches = 0;
  int timed_batches = 0;
  std::string device;
  std::vector<double> run_fps;

  /// (max - min) / median over runs.
  [[nodiscard]] double spread() const;
};

/// Inference-mode throughput on random inputs of the model's configured size.
template <class T>
BenchResult benchmark_fps(Model<T>& model, int batch_size, int warmup_batches = 5, int timed_batches = 10,
                          int runs = 3, std::uint64_t seed = 0);

std::string device_descriptor();

}  // namespace lsas

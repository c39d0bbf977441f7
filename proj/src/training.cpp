#include "lsas/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "lsas/errors.hpp"

namespace lsas {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("batch size must be >= 1, got " + std::to_string(batch_size));
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(lr_gamma > 0.0)) throw ConfigError("lr gamma must be positive");
  for (int m : lr_milestones) {
    if (m < 1) throw ConfigError("lr milestones are 1-based epochs");
  }
}

Json to_json(const TrainConfig& cfg) {
  return Json{{"dataset", cfg.dataset},
              {"model", to_json(cfg.model)},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.lr},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"lr_milestones", cfg.lr_milestones},
              {"lr_gamma", cfg.lr_gamma},
              {"seed", cfg.seed},
              {"output_dir", cfg.output_dir.string()},
              {"train_subset", cfg.train_subset},
              {"test_subset", cfg.test_subset}};
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) lr *= cfg.lr_gamma;
  }
  return lr;
}

template <class T>
SGD<T>::SGD(ParamList<T> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  buffers_.reserve(params_.size());
  for (const auto& p : params_) buffers_.emplace_back(p.value->shape());
}

template <class T>
void SGD<T>::step(double lr) {
  const T wd = static_cast<T>(weight_decay_), m = static_cast<T>(momentum_), rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    T* p = params_[i].value->data();
    const T* g = params_[i].grad->data();
    T* buf = buffers_[i].data();
    const std::size_t n = params_[i].value->size();
    for (std::size_t j = 0; j < n; ++j) {
      const T d = g[j] + wd * p[j];
      buf[j] = started_ ? m * buf[j] + d : d;
      p[j] -= rate * buf[j];
    }
  }
  started_ = true;
}

template <class T>
void SGD<T>::zero_grad() {
  for (auto& p : params_) p.grad->fill(T(0));
}

template <class T>
std::map<std::string, const Tensor<T>*> SGD<T>::state() const {
  std::map<std::string, const Tensor<T>*> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.emplace("optim.momentum." + params_[i].name, &buffers_[i]);
  return out;
}

template <class T>
void SGD<T>::load_state(const CheckpointArchive& archive) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto it = archive.tensors.find("optim.momentum." + params_[i].name);
    if (it == archive.tensors.end()) throw ConfigError("checkpoint lacks optimizer state for '" + params_[i].name + "'");
    if (it->second.shape() != buffers_[i].shape()) throw ConfigError("optimizer state shape mismatch");
    std::transform(it->second.data(), it->second.data() + it->second.size(), buffers_[i].data(),
                   [](double v) { return static_cast<T>(v); });
  }
  started_ = archive.meta.value("optim_started", true);
}

template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidArgument("softmax_cross_entropy: label count mismatch");
  if (n == 0) throw InvalidArgument("softmax_cross_entropy: empty batch");
  if (grad) *grad = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* z = logits.data() + static_cast<std::size_t>(i) * k;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw InvalidArgument("softmax_cross_entropy: label outside class range");
    double zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max<double>(zmax, z[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double log_sum = std::log(sum) + zmax;
    loss += log_sum - z[y];
    if (grad) {
      T* g = grad->data() + static_cast<std::size_t>(i) * k;
      for (int j = 0; j < k; ++j) {
        g[j] = static_cast<T>((std::exp(z[j] - log_sum) - (j == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  return loss / n;
}

template <class T>
double evaluate(Model<T>& model, const Dataset& data, const DatasetSpec& spec, int batch_size) {
  if (data.size() == 0) throw InvalidArgument("evaluate: split is empty");
  if (data.num_classes() != model.config().num_classes) {
    throw ConfigError("evaluate: dataset has " + std::to_string(data.num_classes()) + " classes, model has " +
                      std::to_string(model.config().num_classes));
  }
  BatchLoader<T> loader(data, spec, batch_size, false, 0);
  Batch<T> batch;
  std::size_t correct = 0;
  while (loader.next(batch)) {
    const Tensor<T> logits = model.forward(batch.images, Mode::Inference);
    const int k = logits.dim(1);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const T* z = logits.data() + i * static_cast<std::size_t>(k);
      const int pred = static_cast<int>(std::max_element(z, z + k) - z);
      correct += pred == batch.labels[i];
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

fs::path next_run_dir(const fs::path& root) {
  fs::create_directories(root);
  for (int i = 1;; ++i) {
    std::ostringstream name;
    name << "run_" << std::setw(3) << std::setfill('0') << i;
    const fs::path p = root / name.str();
    if (!fs::exists(p)) {
      fs::create_directories(p);
      return p;
    }
  }
}

template <class T>
void save(const fs::path& path, Model<T>& model, const SGD<T>& opt, const TrainConfig& cfg, int epoch,
          double best_acc) {
  auto tensors = model_state(model);
  for (const auto& [k, v] : opt.state()) tensors.emplace(k, v);
  Json meta{{"model", to_json(cfg.model)},
            {"dataset", cfg.dataset},
            {"train", to_json(cfg)},
            {"epoch", epoch},
            {"best_acc", best_acc},
            {"optim_started", opt.started()}};
  write_checkpoint(path, meta, tensors);
}

}  // namespace

template <class T>
TrainResult train(const TrainConfig& cfg, const DataSplits& data, std::ostream* log) {
  cfg.validate();
  if (!data.train || !data.test) throw DataError("train: dataset splits not loaded");
  if (data.spec.num_classes != cfg.model.num_classes) {
    throw ConfigError("dataset '" + data.spec.name + "' has " + std::to_string(data.spec.num_classes) +
                      " classes but the model is configured for " + std::to_string(cfg.model.num_classes));
  }

  std::unique_ptr<SubsetDataset> train_sub, test_sub;
  const Dataset* train_set = data.train.get();
  const Dataset* test_set = data.test.get();
  if (cfg.train_subset > 0) {
    train_sub = std::make_unique<SubsetDataset>(*train_set, balanced_subset(*train_set, cfg.train_subset));
    train_set = train_sub.get();
  }
  if (cfg.test_subset > 0) {
    test_sub = std::make_unique<SubsetDataset>(*test_set, balanced_subset(*test_set, cfg.test_subset));
    test_set = test_sub.get();
  }
  if (train_set->size() == 0) throw DataError("train: training split is empty");

  Model<T> model = build_model<T>(cfg.model, cfg.seed);
  SGD<T> opt(model.parameters(), cfg.momentum, cfg.weight_decay);
  TrainResult result;
  int first_epoch = 1;

  if (!cfg.resume.empty()) {
    const CheckpointArchive archive = read_checkpoint(cfg.resume);
    if (archive.meta.value("model", Json{}) != to_json(cfg.model)) {
      throw ConfigError("resume: checkpoint model config " + archive.meta.value("model", Json{}).dump() +
                        " differs from requested " + to_json(cfg.model).dump());
    }
    load_model_state(model, archive);
    opt.load_state(archive);
    first_epoch = archive.meta.value("epoch", 0) + 1;
    result.best_acc = archive.meta.value("best_acc", 0.0);
    result.run_dir = cfg.resume.has_parent_path() ? cfg.resume.parent_path() : fs::path(".");
  } else {
    result.run_dir = next_run_dir(cfg.output_dir);
  }
  result.best_checkpoint = result.run_dir / "best.ckpt";
  result.final_checkpoint = result.run_dir / "final.ckpt";

  const fs::path history_path = result.run_dir / "history.csv";
  const bool fresh_history = cfg.resume.empty() || !fs::exists(history_path);
  std::ofstream history(history_path, fresh_history ? std::ios::trunc : std::ios::app);
  if (fresh_history) history << "epoch,lr,train_loss,test_acc\n";
  {
    std::ofstream cfg_out(result.run_dir / "config.json");
    cfg_out << to_json(cfg).dump(2) << '\n';
  }
  if (log) {
    *log << "run directory: " << result.run_dir.string() << "\n"
         << "train samples: " << train_set->size() << ", test samples: " << test_set->size() << "\n"
         << "trainable tensors (all weight-decayed): " << opt.params().size() << "\n";
  }

  BatchLoader<T> loader(*train_set, data.spec, cfg.batch_size, true, cfg.seed);
  Batch<T> batch;
  Tensor<T> grad;
  for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = learning_rate(cfg, epoch);
    loader.start_epoch(epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0, step = 0;
    while (loader.next(batch)) {
      ++step;
      opt.zero_grad();
      const Tensor<T> logits = model.forward(batch.images, Mode::Train);
      const double loss = softmax_cross_entropy(logits, batch.labels, &grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                              " (lr " + std::to_string(lr) + "); lower --lr or check the input data");
      }
      model.backward(grad);
      opt.step(lr);
      loss_sum += loss * static_cast<double>(batch.labels.size());
      seen += batch.labels.size();
    }
    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(seen), 0.0};
    rec.test_acc = test_set->size() > 0 ? evaluate(model, *test_set, data.spec, cfg.batch_size) : 0.0;
    result.history.push_back(rec);
    history << rec.epoch << ',' << std::setprecision(8) << rec.lr << ',' << rec.train_loss << ',' << rec.test_acc
            << '\n'
            << std::flush;

    if (rec.test_acc > result.best_acc || !fs::exists(result.best_checkpoint)) {
      result.best_acc = std::max(result.best_acc, rec.test_acc);
      save(result.best_checkpoint, model, opt, cfg, epoch, result.best_acc);
    }
    save(result.final_checkpoint, model, opt, cfg, epoch, result.best_acc);
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "epoch " << epoch << "/" << cfg.epochs << "  lr " << lr << "  train_loss " << std::fixed
           << std::setprecision(4) << rec.train_loss << "  test_acc " << std::setprecision(2) << rec.test_acc << "  ("
           << std::setprecision(1) << secs << "s)" << std::defaultfloat << std::setprecision(6) << std::endl;
    }
  }
  return result;
}

double BenchResult::spread() const {
  if (run_fps.empty() || fps <= 0.0) return 0.0;
  const auto [lo, hi] = std::minmax_element(run_fps.begin(), run_fps.end());
  return (*hi - *lo) / fps;
}

std::string device_descriptor() {
  return "cpu (" + std::to_string(std::max(1u, std::thread::hardware_concurrency())) + " hardware threads, BLAS gemm)";
}

template <class T>
BenchResult benchmark_fps(Model<T>& model, int batch_size, int warmup_batches, int timed_batches, int runs,
                          std::uint64_t seed) {
  if (batch_size < 1 || timed_batches < 1 || runs < 1) throw InvalidArgument("benchmark_fps: counts must be positive");
  if (warmup_batches < 5) throw InvalidArgument("benchmark_fps: at least 5 warmup batches are required");
  const auto& cfg = model.config();
  Tensor<T> input({batch_size, 3, cfg.input_height, cfg.input_width});
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : input.values()) v = static_cast<T>(normal(rng));

  BenchResult r;
  r.batch_size = batch_size;
  r.warmup_batches = warmup_batches;
  r.timed_batches = timed_batches;
  r.device = device_descriptor();
  for (int i = 0; i < warmup_batches; ++i) (void)model.forward(input, Mode::Inference);
  for (int run = 0; run < runs; ++run) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < timed_batches; ++i) (void)model.forward(input, Mode::Inference);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.run_fps.push_back(static_cast<double>(timed_batches) * batch_size / secs);
  }
  std::vector<double> sorted = r.run_fps;
  std::sort(sorted.begin(), sorted.end());
  r.fps = sorted[sorted.size() / 2];
  return r;
}

template class SGD<float>;
template class SGD<double>;
template double softmax_cross_entropy<float>(const Tensor<float>&, std::span<const int>, Tensor<float>*);
template double softmax_cross_entropy<double>(const Tensor<double>&, std::span<const int>, Tensor<double>*);
template double evaluate<float>(Model<float>&, const Dataset&, const DatasetSpec&, int);
template double evaluate<double>(Model<double>&, const Dataset&, const DatasetSpec&, int);
template TrainResult train<float>(const TrainConfig&, const DataSplits&, std::ostream*);
template TrainResult train<double>(const TrainConfig&, const DataSplits&, std::ostream*);
template BenchResult benchmark_fps<float>(Model<float>&, int, int, int, int, std::uint64_t);
template BenchResult benchmark_fps<double>(Model<double>&, int, int, int, int, std::uint64_t);

}  // namespace lsas

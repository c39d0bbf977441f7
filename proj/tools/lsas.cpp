// lsas: train, evaluate, benchmark and inspect LSAS-enhanced ResNets.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "lsas/ae_metric.hpp"
#include "lsas/checkpoint.hpp"
#include "lsas/data.hpp"
#include "lsas/errors.hpp"
#include "lsas/image_io.hpp"
#include "lsas/interpretability.hpp"
#include "lsas/training.hpp"

namespace {

using namespace lsas;
namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kInvalidArgument = 5,
  kDivergence = 6,
};

struct ModelFlags {
  std::string dataset = "auto";
  int depth = 164;
  std::string attention = "se";
  int order = 1;
  int mu = -1;
  int num_classes = -1;
  int se_reduction = 16;
  int eca_kernel = 3;
};

void add_model_flags(CLI::App* app, ModelFlags& f, const std::string& attention_default) {
  f.attention = attention_default;
  app->add_option("--dataset", f.dataset,
                  "cifar10 | cifar100 | stl10 | imagenet | synthetic; auto picks cifar10 for depths 83/164/245 "
                  "and imagenet for 34/50")
      ->capture_default_str();
  app->add_option("--depth", f.depth, "ResNet depth: 83, 164, 245 (pre-activation) or 34, 50")->capture_default_str();
  app->add_option("--attention", f.attention, "base attention: none | se | cbam | srm | eca")->capture_default_str();
  app->add_option("--order", f.order, "sub-attention order n (0 = base module only)")->capture_default_str();
  app->add_option("--mu", f.mu, "selection gate: attention only where channels > mu; -1 = 128, or 512 for depths 34/50")
      ->capture_default_str();
  app->add_option("--num-classes", f.num_classes, "classifier width; -1 = dataset's class count")
      ->capture_default_str();
  app->add_option("--se-reduction", f.se_reduction, "SE / CBAM reduction ratio")->capture_default_str();
  app->add_option("--eca-kernel", f.eca_kernel, "ECA 1-D kernel size")->capture_default_str();
}

std::string resolved_dataset(const ModelFlags& f) {
  if (f.dataset != "auto") return f.dataset;
  return (f.depth == 34 || f.depth == 50) ? "imagenet" : "cifar10";
}

ModelConfig resolve_model(const ModelFlags& f, DatasetSpec& spec) {
  spec = dataset_spec(resolved_dataset(f));
  ModelConfig c;
  c.depth = f.depth;
  c.attention = parse_attention_kind(f.attention);
  c.lsas_order = f.order;
  c.gate_mu = f.mu >= 0 ? f.mu : (c.is_imagenet_family() ? 512 : 128);
  c.num_classes = f.num_classes > 0 ? f.num_classes : spec.num_classes;
  c.input_height = c.input_width = spec.image_size;
  c.se_reduction = f.se_reduction;
  c.eca_kernel = f.eca_kernel;
  c.validate();
  return c;
}

void echo_config(const CLI::App* app) {
  std::cout << "# effective configuration (" << app->get_name() << ")\n";
  std::istringstream lines(app->config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) std::cout << "#   " << line << '\n';
  }
  std::cout << std::flush;
}

std::string millions(std::size_t n) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6 << "M";
  return s.str();
}

// ----------------------------------------------------------------------------- params

int run_params(const ModelFlags& f) {
  DatasetSpec spec;
  const ModelConfig cfg = resolve_model(f, spec);
  Model<float> model = build_model<float>(cfg, 0);
  const auto rows = count_parameters_by_module(model);
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::cout << std::left << std::setw(static_cast<int>(width)) << "module" << "  " << std::right << std::setw(12)
            << "parameters" << "  " << std::setw(8) << "M" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right << std::setw(12)
              << r.parameters << "  " << std::setw(8) << millions(r.parameters) << '\n';
  }
  const std::size_t total = count_parameters(model);
  std::cout << std::left << std::setw(static_cast<int>(width)) << "total" << "  " << std::right << std::setw(12) << total
            << "  " << std::setw(8) << millions(total) << '\n';
  return kOk;
}

// ----------------------------------------------------------------------------- train

struct TrainFlags {
  int epochs = 164;
  int batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string milestones = "81,122";
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  std::string resume;
  std::string data_dir;
};

int run_train(const ModelFlags& mf, const TrainFlags& tf) {
  TrainConfig cfg;
  DatasetSpec spec;
  cfg.model = resolve_model(mf, spec);
  cfg.dataset = spec.name;
  cfg.epochs = tf.epochs;
  cfg.batch_size = tf.batch_size;
  cfg.lr = tf.lr;
  cfg.momentum = tf.momentum;
  cfg.weight_decay = tf.weight_decay;
  cfg.lr_milestones.clear();
  std::istringstream ms(tf.milestones);
  for (std::string tok; std::getline(ms, tok, ',');) {
    try {
      std::size_t used = 0;
      cfg.lr_milestones.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--milestones: '" + tok + "' is not an integer epoch");
    }
  }
  cfg.seed = tf.seed;
  cfg.output_dir = tf.out;
  cfg.train_subset = tf.train_subset;
  cfg.test_subset = tf.test_subset;
  cfg.resume = tf.resume;
  cfg.validate();

  DataSplits data = spec.name == "synthetic" ? synthetic_dataset({.seed = tf.seed})
                                             : load_dataset(spec.name, tf.data_dir);
  const TrainResult r = train<float>(cfg, data, &std::cout);
  std::cout << "best test accuracy: " << std::fixed << std::setprecision(2) << r.best_acc << "%\n"
            << "best checkpoint:  " << r.best_checkpoint.string() << "\n"
            << "final checkpoint: " << r.final_checkpoint.string() << "\n";
  return kOk;
}

// ----------------------------------------------------------------------------- eval

int run_eval(const std::string& checkpoint, const std::string& dataset, int batch_size, std::size_t test_subset,
             const std::string& data_dir, std::uint64_t seed) {
  const CheckpointArchive archive = read_checkpoint(checkpoint);
  Model<float> model = model_from_checkpoint<float>(archive);
  const std::string name = dataset == "auto" ? archive.meta.value("dataset", std::string("cifar10")) : dataset;
  DataSplits data = name == "synthetic" ? synthetic_dataset({.seed = seed}) : load_dataset(name, data_dir);
  if (data.spec.num_classes != model.config().num_classes) {
    throw ConfigError("checkpoint/config mismatch: checkpoint has " + std::to_string(model.config().num_classes) +
                      " classes, dataset '" + name + "' has " + std::to_string(data.spec.num_classes));
  }
  const Dataset* split = data.test.get();
  std::unique_ptr<SubsetDataset> sub;
  if (test_subset > 0) {
    sub = std::make_unique<SubsetDataset>(*split, balanced_subset(*split, test_subset));
    split = sub.get();
  }
  const double acc = evaluate(model, *split, data.spec, batch_size);
  std::cout << "top1 accuracy: " << std::fixed << std::setprecision(2) << acc << "% on " << split->size()
            << " images\n";
  return kOk;
}

// ----------------------------------------------------------------------------- bench

int run_bench(const ModelFlags& mf, const std::string& checkpoint, int batch_size, int warmup, int timed, int runs,
              std::uint64_t seed) {
  DatasetSpec spec;
  Model<float> model = checkpoint.empty() ? build_model<float>(resolve_model(mf, spec), seed)
                                          : model_from_checkpoint<float>(read_checkpoint(checkpoint));
  const BenchResult r = benchmark_fps(model, batch_size, warmup, timed, runs, seed);
  std::cout << "device: " << r.device << "\n"
            << "batch size: " << r.batch_size << ", warmup batches: " << r.warmup_batches
            << ", timed batches per run: " << r.timed_batches << "\n";
  for (std::size_t i = 0; i < r.run_fps.size(); ++i) {
    std::cout << "run " << i + 1 << ": " << std::fixed << std::setprecision(1) << r.run_fps[i] << " images/s\n";
  }
  std::cout << "fps (median): " << std::fixed << std::setprecision(1) << r.fps << "  spread: " << std::setprecision(1)
            << 100.0 * r.spread() << "%\n";
  return kOk;
}

// ----------------------------------------------------------------------------- gradcam / ae helpers

template <class T>
Tensor<T> image_tensor(const Image8& img, const Normalization& norm) {
  Sample s{3, img.height, img.width, {}, -1};
  s.pixels.resize(static_cast<std::size_t>(3) * img.height * img.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        s.pixels[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] =
            img.at(y, x, img.channels == 3 ? c : 0);
      }
    }
  }
  Tensor<T> t({3, img.height, img.width});
  write_normalized(s, norm, t.data());
  return t;
}

Image8 sample_image(const Sample& s) {
  Image8 img{s.width, s.height, 3, {}};
  img.pixels.resize(static_cast<std::size_t>(3) * s.width * s.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        img.pixels[(static_cast<std::size_t>(y) * s.width + x) * 3 + c] =
            s.pixels[(static_cast<std::size_t>(c) * s.height + y) * s.width + x];
      }
    }
  }
  return img;
}

struct LoadedModel {
  Model<float> model;
  DatasetSpec spec;
};

LoadedModel load_or_build(const std::string& checkpoint, const ModelFlags& mf, std::uint64_t seed) {
  if (!checkpoint.empty()) {
    const CheckpointArchive archive = read_checkpoint(checkpoint);
    Model<float> model = model_from_checkpoint<float>(archive);
    DatasetSpec spec = dataset_spec(archive.meta.value("dataset", std::string("cifar10")));
    return {std::move(model), spec};
  }
  std::cerr << "warning: no --checkpoint given; using an untrained model initialized from --seed\n";
  DatasetSpec spec;
  const ModelConfig cfg = resolve_model(mf, spec);
  return {build_model<float>(cfg, seed), spec};
}

int predicted_class(Model<float>& model, const Tensor<float>& image) {
  Tensor<float> x = image;
  x.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  const Tensor<float> logits = model.forward(x, Mode::Inference);
  return static_cast<int>(std::max_element(logits.data(), logits.data() + logits.size()) - logits.data());
}

// ----------------------------------------------------------------------------- gradcam

struct GradcamFlags {
  std::string checkpoint;
  std::string image;
  std::string split = "test";
  std::size_t index = 0;
  int class_index = -1;
  std::string layer;
  std::string out = "heatmaps";
  bool overlay = true;
  std::string data_dir;
  std::uint64_t seed = 0;
};

int run_gradcam(const ModelFlags& mf, const GradcamFlags& g) {
  LoadedModel lm = load_or_build(g.checkpoint, mf, g.seed);
  Image8 img;
  if (!g.image.empty()) {
    img = read_image(g.image);
  } else {
    DataSplits data = lm.spec.name == "synthetic" ? synthetic_dataset({.seed = g.seed})
                                                  : load_dataset(lm.spec.name, g.data_dir);
    const Dataset& ds = g.split == "train" ? *data.train : *data.test;
    if (g.index >= ds.size()) throw InvalidArgument("--index " + std::to_string(g.index) + " outside the split");
    img = sample_image(ds.get(g.index));
  }
  const Tensor<float> x = image_tensor<float>(img, lm.spec.norm);
  const std::string layer = g.layer.empty() ? lm.model.last_block_name() : g.layer;
  const int target = g.class_index >= 0 ? g.class_index : predicted_class(lm.model, x);
  const Heatmap h = gradcam(lm.model, x, target, layer);

  fs::create_directories(g.out);
  const fs::path file = fs::path(g.out) / heatmap_filename(g.split, g.index, target);
  write_heatmap_png(file, h);
  std::cout << "layer: " << layer << "\nclass: " << target << "\nheatmap: " << file.string() << "\n";
  if (g.overlay) {
    fs::path overlay = file;
    overlay.replace_filename(file.stem().string() + "_overlay.png");
    write_overlay_png(overlay, h, img);
    std::cout << "overlay: " << overlay.string() << "\n";
  }
  const RegionMask m = focused_region(h);
  std::cout << "focused region: " << m.count() << " px (" << std::fixed << std::setprecision(2) << 100.0 * m.fraction
            << "%)\n";
  return kOk;
}

// ----------------------------------------------------------------------------- ae

struct AEFlags {
  std::string annotations;
  std::string heatmaps;
  std::string checkpoint;
  std::string layer;
  double lambda = 0.8;
  double fraction = 0.2;
  std::string out = "ae_report";
  std::uint64_t seed = 0;
};

int run_ae(const ModelFlags& mf, const AEFlags& a) {
  if (!(a.lambda >= 0.0 && a.lambda < 1.0)) throw InvalidArgument("--lambda must be in [0, 1)");
  const AnnotationSet set = load_annotations(a.annotations);
  for (const auto& w : set.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& i : set.issues) std::cerr << "skipped " << i.image_ref << ": " << i.message << '\n';
  if (set.records.empty()) throw DataError("no usable annotated images in '" + a.annotations + "'");

  std::optional<LoadedModel> lm;
  if (a.heatmaps.empty()) lm.emplace(load_or_build(a.checkpoint, mf, a.seed));
  const std::string layer = lm ? (a.layer.empty() ? lm->model.last_block_name() : a.layer) : "";

  std::vector<AEImageScore> scores;
  for (const auto& rec : set.records) {
    Heatmap h;
    if (lm) {
      fs::path image_path = fs::path(a.annotations) / (rec.image_ref + ".png");
      if (!fs::exists(image_path)) image_path.replace_extension(".jpg");
      const Tensor<float> x = image_tensor<float>(read_image(image_path), lm->spec.norm);
      h = gradcam(lm->model, x, rec.label, layer);
    } else {
      h = read_heatmap_png(fs::path(a.heatmaps) / (rec.image_ref + ".png"));
    }
    const RegionMask m = focused_region(h, a.fraction);
    const AESResult r = aes_score(m, rec, a.lambda);
    scores.push_back({rec.image_ref, rec.label, r.overlap_ratio, r.aes});
  }
  const AEReport report = make_report(std::move(scores), a.lambda);

  fs::create_directories(a.out);
  {
    std::ofstream tsv(fs::path(a.out) / "ae_report.tsv");
    write_report(tsv, report);
    std::ofstream csv(fs::path(a.out) / "ae_report.csv");
    write_report_csv(csv, report);
  }
  std::cout << "images: " << report.images.size() << "\nlambda: " << report.lambda << "\nAE: " << std::fixed
            << std::setprecision(2) << report.ae << "%\nreport: " << (fs::path(a.out) / "ae_report.tsv").string()
            << '\n';
  return kOk;
}

// ----------------------------------------------------------------------------- synth-ae

/// Heatmap peaked at (cy, cx) with values falling off with distance.
Heatmap radial_heatmap(int height, int width, double cy, double cx) {
  Heatmap h;
  h.height = height;
  h.width = width;
  h.values.resize(static_cast<std::size_t>(height) * width);
  const double scale = std::hypot(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      h.values[static_cast<std::size_t>(y) * width + x] = 1.0 - std::hypot(y + 0.5 - cy, x + 0.5 - cx) / scale;
    }
  }
  normalize_unit_range(h.values);
  return h;
}

int run_synth_ae(std::uint64_t seed, std::size_t count, int size, const std::string& out) {
  const auto records = synth_annotations(seed, count, size, size);
  write_annotation_set(out, records, seed);
  const fs::path heat_dir = fs::path(out) / "heatmaps";
  fs::create_directories(heat_dir);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> anywhere(0.0, static_cast<double>(size));
  for (const auto& rec : records) {
    // Peak at the ideal box's center or at a random location.
    double sy = 0, sx = 0, n = 0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!rec.ideal_mask.at(y, x)) continue;
        sy += y + 0.5;
        sx += x + 0.5;
        n += 1;
      }
    }
    const bool centered = std::bernoulli_distribution(0.5)(rng);
    const double cy = centered ? sy / n : anywhere(rng);
    const double cx = centered ? sx / n : anywhere(rng);
    write_heatmap_png(heat_dir / (rec.image_ref + ".png"), radial_heatmap(size, size, cy, cx));
  }
  std::cout << "wrote " << records.size() << " annotated images and heatmaps to " << out << "\n";
  return kOk;
}

/// Replaces `--config FILE` with the file's entries as `--key=value` tokens
/// placed right after the subcommand, so later command-line flags win.
/// Splices `--config FILE` entries in right after the subcommand so later flags
/// win. Keys under `[name]` apply only to subcommand `name`; top-level keys must
/// name an option of the selected subcommand.
std::vector<std::string> expand_config(CLI::App& app, int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> out;
  std::string file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config requires a file argument");
      file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (file.empty()) return out;
  std::ifstream in(file);
  if (!in) throw CLI::FileError::Missing(file);
  const auto sub = std::find_if(out.begin(), out.end(), [](const std::string& a) { return a.empty() || a[0] != '-'; });
  if (sub == out.end()) throw CLI::RequiredError("a subcommand is required before --config");
  const CLI::App* command = app.get_subcommand_no_throw(*sub);
  if (command == nullptr) throw CLI::ExtrasError({*sub});
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigINI().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && item.parents.front() != *sub) continue;
    if (command->get_option_no_throw("--" + item.name) == nullptr) {
      throw CLI::ConfigError("config key '" + item.name + "' in " + file + " is not an option of '" + *sub + "'");
    }
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    injected.push_back("--" + item.name + "=" + value);
  }
  out.insert(sub + 1, injected.begin(), injected.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSAS attention toolkit: train, evaluate, benchmark and interpret LSAS-enhanced ResNets"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", "lsas 1.0.0");

  ModelFlags params_mf, train_mf, bench_mf, gradcam_mf, ae_mf;
  TrainFlags tf;
  GradcamFlags gf;
  AEFlags af;

  auto* params = app.add_subcommand("params", "print per-module and total parameter counts");
  add_model_flags(params, params_mf, "none");

  auto* train_cmd = app.add_subcommand("train", "train a model; writes out/run_<NNN>/{history.csv,best.ckpt,final.ckpt}");
  add_model_flags(train_cmd, train_mf, "se");
  train_cmd->add_option("--epochs", tf.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", tf.batch_size, "mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", tf.lr, "initial learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tf.momentum, "SGD momentum")->capture_default_str();
  train_cmd->add_option("--weight-decay", tf.weight_decay, "L2 weight decay on every trainable tensor")
      ->capture_default_str();
  train_cmd->add_option("--milestones", tf.milestones, "comma-separated epochs at which lr is multiplied by 0.1")
      ->capture_default_str();
  train_cmd->add_option("--seed", tf.seed, "seed for initialization, shuffling and augmentation")
      ->capture_default_str();
  train_cmd->add_option("--out", tf.out, "output root for run directories")->capture_default_str();
  train_cmd->add_option("--train-subset", tf.train_subset, "class-balanced training subset size; 0 = full split")
      ->capture_default_str();
  train_cmd->add_option("--test-subset", tf.test_subset, "class-balanced test subset size; 0 = full split")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint", tf.resume, "resume from this checkpoint");
  train_cmd->add_option("--data-dir", tf.data_dir, "dataset root (default: $LSAS_DATA_DIR, else ./data)");

  std::string eval_ckpt, eval_dataset = "auto", eval_data_dir;
  int eval_batch = 128;
  std::size_t eval_subset = 0;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a test split");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "dataset; auto = the one recorded in the checkpoint")
      ->capture_default_str();
  eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size")->capture_default_str();
  eval_cmd->add_option("--test-subset", eval_subset, "class-balanced subset size; 0 = full split")
      ->capture_default_str();
  eval_cmd->add_option("--data-dir", eval_data_dir, "dataset root (default: $LSAS_DATA_DIR, else ./data)");
  eval_cmd->add_option("--seed", eval_seed, "seed for the synthetic dataset")->capture_default_str();

  std::string bench_ckpt;
  int bench_batch = 64, bench_warmup = 5, bench_timed = 10, bench_runs = 3;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench", "inference throughput (images per second)");
  add_model_flags(bench, bench_mf, "se");
  bench->add_option("--checkpoint", bench_ckpt, "benchmark this checkpoint instead of a fresh model");
  bench->add_option("--batch-size", bench_batch, "batch size")->capture_default_str();
  bench->add_option("--warmup", bench_warmup, "untimed warmup batches (>= 5)")->capture_default_str();
  bench->add_option("--timed-batches", bench_timed, "timed batches per run")->capture_default_str();
  bench->add_option("--runs", bench_runs, "timed runs; the median is reported")->capture_default_str();
  bench->add_option("--seed", bench_seed, "seed for weights and inputs")->capture_default_str();

  auto* gradcam_cmd = app.add_subcommand("gradcam", "write a Grad-CAM heatmap (and overlay) for one image");
  add_model_flags(gradcam_cmd, gradcam_mf, "se");
  gradcam_cmd->add_option("--checkpoint", gf.checkpoint, "trained checkpoint");
  gradcam_cmd->add_option("--image", gf.image, "PNG/JPEG input; otherwise --split/--index select a dataset image");
  gradcam_cmd->add_option("--split", gf.split, "train | test")->capture_default_str();
  gradcam_cmd->add_option("--index", gf.index, "image index within the split")->capture_default_str();
  gradcam_cmd->add_option("--class-index", gf.class_index, "target class; -1 = predicted class")
      ->capture_default_str();
  gradcam_cmd->add_option("--layer", gf.layer, "layer name, e.g. stage3.block8; default = last residual block");
  gradcam_cmd->add_option("--out", gf.out, "output directory")->capture_default_str();
  gradcam_cmd->add_flag("--overlay,!--no-overlay", gf.overlay, "also write <name>_overlay.png")->capture_default_str();
  gradcam_cmd->add_option("--data-dir", gf.data_dir, "dataset root (default: $LSAS_DATA_DIR, else ./data)");
  gradcam_cmd->add_option("--seed", gf.seed, "seed for an untrained model / synthetic data")->capture_default_str();

  auto* ae = app.add_subcommand("ae", "attention efficiency (AE) metric over an annotated image directory");
  add_model_flags(ae, ae_mf, "se");
  ae->add_option("--annotations", af.annotations, "directory of <stem>.png + <stem>.mask.png (+ labels.csv)")
      ->required();
  ae->add_option("--heatmaps", af.heatmaps, "precomputed <stem>.png heatmaps; otherwise Grad-CAM is run");
  ae->add_option("--checkpoint", af.checkpoint, "model for Grad-CAM");
  ae->add_option("--layer", af.layer, "Grad-CAM layer; default = last residual block");
  ae->add_option("--lambda", af.lambda, "overlap threshold (strict >)")->capture_default_str();
  ae->add_option("--fraction", af.fraction, "top fraction of heatmap pixels forming the focused region")
      ->capture_default_str();
  ae->add_option("--out", af.out, "report directory")->capture_default_str();
  ae->add_option("--seed", af.seed, "seed for an untrained model")->capture_default_str();

  std::uint64_t synth_seed = 0;
  std::size_t synth_count = 120;
  int synth_size = 32;
  std::string synth_out = "synth_ae";
  auto* synth = app.add_subcommand("synth-ae", "generate a deterministic annotated set with matching heatmaps");
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--count", synth_count, "number of images")->capture_default_str();
  synth->add_option("--size", synth_size, "image side in pixels")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  std::string config_file;
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_file, "INI file of flag settings (top-level keys or a [subcommand] section); command-line flags take precedence");
  }

  try {
    std::vector<std::string> args = expand_config(app, argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "error[config]: " << e.what() << '\n';
    return kConfig;
  } catch (const CLI::ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << '\n';
    return kConfig;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << '\n';
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    echo_config(sub);
    if (sub == params) return run_params(params_mf);
    if (sub == train_cmd) return run_train(train_mf, tf);
    if (sub == eval_cmd) return run_eval(eval_ckpt, eval_dataset, eval_batch, eval_subset, eval_data_dir, eval_seed);
    if (sub == bench) return run_bench(bench_mf, bench_ckpt, bench_batch, bench_warmup, bench_timed, bench_runs, bench_seed);
    if (sub == gradcam_cmd) return run_gradcam(gradcam_mf, gf);
    if (sub == ae) return run_ae(ae_mf, af);
    if (sub == synth) return run_synth_ae(synth_seed, synth_count, synth_size, synth_out);
  } catch (const ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "error[data]: " << e.what() << '\n';
    return kData;
  } catch (const InvalidArgument& e) {
    std::cerr << "error[invalid-argument]: " << e.what() << '\n';
    return kInvalidArgument;
  } catch (const DivergenceError& e) {
    std::cerr << "error[divergence]: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lsas/checkpoint.hpp"
#include "lsas/training.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::random_tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lsas_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig small_model(int classes = 10) {
  ModelConfig m;
  m.depth = 83;
  m.attention = AttentionKind::SE;
  m.lsas_order = 1;
  m.gate_mu = 128;
  m.num_classes = classes;
  m.input_height = m.input_width = 16;
  return m;
}

DataSplits small_data(std::size_t train, std::size_t test) {
  SyntheticOptions o;
  o.train_size = train;
  o.test_size = test;
  o.image_size = 16;
  o.seed = 4;
  return synthetic_dataset(o);
}

}  // namespace

TEST_CASE("SGD follows momentum with weight decay") {
  Tensor<double> w({2}, {1.0, -2.0}), g({2}, {0.5, 0.1});
  SGD<double> opt({{"w", &w, &g}}, 0.9, 0.1);
  CHECK_FALSE(opt.started());
  opt.step(0.1);
  CHECK(w[0] == doctest::Approx(0.94).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(-1.99).epsilon(1e-14));
  opt.step(0.1);
  CHECK(w[0] == doctest::Approx(0.8266).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(-1.9711).epsilon(1e-14));
  CHECK(opt.state().at("optim.momentum.w")->storage()[0] == doctest::Approx(1.134));
  opt.zero_grad();
  CHECK(g[0] == 0.0);
}

TEST_CASE("learning-rate schedule steps after each milestone") {
  TrainConfig c;
  c.lr = 0.1;
  c.lr_milestones = {3, 5};
  CHECK(learning_rate(c, 1) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 2) == doctest::Approx(0.1));
  CHECK(learning_rate(c, 3) == doctest::Approx(0.01));
  CHECK(learning_rate(c, 5) == doctest::Approx(0.001));
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("softmax cross-entropy value and gradient") {
  const Tensor<double> zero({1, 2});
  const std::vector<int> first{0};
  CHECK(softmax_cross_entropy<double>(zero, first, nullptr) == doctest::Approx(std::log(2.0)));

  Rng rng(3);
  Tensor<double> logits = random_tensor<double>({4, 5}, rng, -3, 3), grad;
  const std::vector<int> labels{0, 4, 2, 2};
  (void)softmax_cross_entropy<double>(logits, labels, &grad);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto lp = logits, lm = logits;
    lp[i] += 1e-6;
    lm[i] -= 1e-6;
    const double fd = (softmax_cross_entropy<double>(lp, labels, nullptr) -
                       softmax_cross_entropy<double>(lm, labels, nullptr)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  Tensor<double> huge({1, 2}, {1000.0, -1000.0});
  CHECK(std::isfinite(softmax_cross_entropy<double>(huge, std::vector<int>{1}, nullptr)));
}

TEST_CASE("checkpoint round trip restores outputs and rejects mismatched models") {
  const auto dir = scratch("ckpt");
  auto cfg = small_model();
  auto model = build_model<float>(cfg, 21);
  Rng rng(1);
  const auto x = random_tensor<float>({2, 3, 16, 16}, rng);
  // Populate BN running statistics so buffers are non-trivial.
  (void)model.forward(x, Mode::Train);
  write_checkpoint(dir / "m.ckpt", Json{{"model", to_json(cfg)}}, model_state(model));

  const auto archive = read_checkpoint(dir / "m.ckpt");
  auto restored = model_from_checkpoint<float>(archive);
  CHECK(restored.forward(x, Mode::Inference).storage() == model.forward(x, Mode::Inference).storage());

  auto other_cfg = cfg;
  other_cfg.lsas_order = 2;
  auto other = build_model<float>(other_cfg, 0);
  CHECK_THROWS_AS(load_model_state(other, archive), ConfigError);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.ckpt"), DataError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.ckpt"), DataError);
}

TEST_CASE("evaluate is deterministic and validates its inputs") {
  const auto data = small_data(8, 20);
  auto model = build_model<float>(small_model(), 2);
  const double a = evaluate(model, *data.test, data.spec, 7);
  CHECK(a == evaluate(model, *data.test, data.spec, 20));
  CHECK(a >= 0.0);
  CHECK(a <= 100.0);
  InMemoryDataset empty("synthetic", 3, 16, 16, 10);
  CHECK_THROWS_AS(evaluate(model, empty, data.spec), InvalidArgument);
  auto narrow = build_model<float>(small_model(5), 2);
  CHECK_THROWS_AS(evaluate(narrow, *data.test, data.spec), ConfigError);
}

TEST_CASE("throughput benchmark") {
  auto model = build_model<float>(small_model(), 0);
  const auto r = benchmark_fps(model, 4, 5, 2, 3, 0);
  CHECK(r.fps > 0.0);
  CHECK(r.run_fps.size() == 3);
  CHECK(r.spread() >= 0.0);
  CHECK_FALSE(r.device.empty());
  CHECK_THROWS_AS(benchmark_fps(model, 4, 2, 2, 3, 0), InvalidArgument);
}

TEST_CASE("short synthetic training lowers the loss and beats chance") {
  const auto data = small_data(256, 64);
  TrainConfig cfg;
  cfg.dataset = "synthetic";
  cfg.model = small_model();
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.lr = 0.1;
  cfg.lr_milestones = {};
  cfg.seed = 3;
  cfg.output_dir = scratch("smoke");
  const auto result = train<float>(cfg, data);
  REQUIRE(result.history.size() == 6);
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
  CHECK(result.best_acc > 20.0);
  CHECK(fs::exists(result.best_checkpoint));
  CHECK(fs::exists(result.run_dir / "history.csv"));
  CHECK(result.run_dir.filename() == "run_001");

  auto best = model_from_checkpoint<float>(read_checkpoint(result.best_checkpoint));
  CHECK(evaluate(best, *data.test, data.spec) == doctest::Approx(result.best_acc));
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const auto data = small_data(48, 16);
  TrainConfig cfg;
  cfg.dataset = "synthetic";
  cfg.model = small_model();
  cfg.model.attention = AttentionKind::ECA;
  cfg.model.gate_mu = 64;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.lr_milestones = {3};
  cfg.seed = 8;
  cfg.output_dir = scratch("resume");
  const auto full = train<float>(cfg, data);

  cfg.epochs = 2;
  const auto first = train<float>(cfg, data);
  cfg.epochs = 3;
  cfg.resume = first.final_checkpoint;
  const auto rest = train<float>(cfg, data);
  REQUIRE(rest.history.size() == 1);
  CHECK(rest.history[0].epoch == 3);
  CHECK(rest.run_dir == first.run_dir);

  const auto a = read_checkpoint(full.final_checkpoint), b = read_checkpoint(rest.final_checkpoint);
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    CAPTURE(name);
    CHECK(b.tensors.at(name).storage() == t.storage());
  }

  cfg.model.lsas_order = 2;
  CHECK_THROWS_AS(train<float>(cfg, data), ConfigError);
}

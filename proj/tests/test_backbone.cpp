#include <doctest.h>

#include "lsas/backbone.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::random_tensor;

namespace {

ModelConfig cifar(int depth, AttentionKind kind, int order = 1, int mu = 128) {
  ModelConfig c;
  c.depth = depth;
  c.attention = kind;
  c.lsas_order = order;
  c.gate_mu = mu;
  return c;
}

std::size_t count_of(const ModelConfig& c) {
  auto m = build_model<float>(c, 1);
  return count_parameters(m);
}

// Independent closed form for the pre-activation bottleneck family, 10 classes.
std::size_t preact_closed_form(int depth, std::size_t attention_per_gated_block, int mu) {
  const std::size_t n = static_cast<std::size_t>(depth - 2) / 9;
  std::size_t total = 3 * 16 * 9;
  std::size_t in = 16;
  for (std::size_t p : {16u, 32u, 64u}) {
    for (std::size_t b = 0; b < n; ++b) {
      total += 2 * in + in * p + 2 * p + 9 * p * p + 2 * p + p * 4 * p;
      if (b == 0) total += in * 4 * p;
      if (static_cast<int>(4 * p) > mu) total += attention_per_gated_block;
      in = 4 * p;
    }
  }
  return total + 2 * 256 + 256 * 10 + 10;
}

constexpr std::size_t kSE256 = 256 * 16 + 16 + 16 * 256 + 256;

}  // namespace

TEST_CASE("vanilla ResNet164 has about 1.70M parameters") {
  const std::size_t n = count_of(cifar(164, AttentionKind::None));
  CHECK(n == preact_closed_form(164, 0, 1 << 20));
  CHECK(std::abs(static_cast<double>(n) / 1e6 - 1.70) <= 0.02);
}

TEST_CASE("gated SE modules add exactly their weights plus the chain vectors") {
  const std::size_t open = count_of(cifar(164, AttentionKind::SE, 1, 128));
  const std::size_t closed = count_of(cifar(164, AttentionKind::SE, 1, 256));
  CHECK(open - closed == 18 * kSE256 + 18 * 2 * 256);
  CHECK(open == preact_closed_form(164, kSE256 + 2 * 256, 128));
  CHECK(closed == count_of(cifar(164, AttentionKind::None)));
}

TEST_CASE("each extra chain level adds 9216 parameters and stays near the expected sizes") {
  const double expected_m[] = {1.86, 1.87, 1.87, 1.88, 1.89, 1.90};
  std::size_t prev = 0;
  for (int order = 0; order <= 5; ++order) {
    const std::size_t n = count_of(cifar(164, AttentionKind::SE, order, 128));
    if (order > 0) CHECK(n - prev == 9216);
    CHECK(std::abs(static_cast<double>(n) / 1e6 - expected_m[order]) <= 0.05);
    prev = n;
  }
}

TEST_CASE("count equals an exhaustive walk over parameter tensors and is input-size invariant") {
  for (auto kind : {AttentionKind::None, AttentionKind::SE, AttentionKind::CBAM, AttentionKind::SRM, AttentionKind::ECA}) {
    CAPTURE(to_string(kind));
    auto cfg = cifar(83, kind, 2, 64);
    auto m = build_model<float>(cfg, 3);
    std::size_t walk = 0;
    for (const auto& p : m.parameters()) walk += p.value->size();
    CHECK(count_parameters(m) == walk);
    cfg.input_height = cfg.input_width = 96;
    CHECK(count_of(cfg) == walk);
  }
  Model<float> empty;
  CHECK(count_parameters(empty) == 0);
}

TEST_CASE("ImageNet-family counts") {
  ModelConfig c;
  c.depth = 50;
  c.num_classes = 1000;
  c.input_height = c.input_width = 224;
  CHECK(count_of(c) == 25557032);
  c.depth = 34;
  CHECK(count_of(c) == 21797672);
}

TEST_CASE("forward returns one logit row per sample") {
  auto cfg = cifar(83, AttentionKind::SE, 1, 128);
  cfg.num_classes = 7;
  auto m = build_model<float>(cfg, 5);
  Rng rng(5);
  const auto y = m.forward(random_tensor<float>({3, 3, 16, 16}, rng), Mode::Inference);
  CHECK(y.shape() == std::vector<int>{3, 7});
}

TEST_CASE("a closed gate everywhere reproduces the vanilla network bitwise") {
  auto gated = build_model<float>(cifar(83, AttentionKind::CBAM, 3, 256), 11);
  auto vanilla = build_model<float>(cifar(83, AttentionKind::None), 11);
  Rng rng(1);
  const auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  CHECK(gated.forward(x, Mode::Inference).storage() == vanilla.forward(x, Mode::Inference).storage());
}

TEST_CASE("layer and parameter names are addressable") {
  auto m = build_model<float>(cifar(164, AttentionKind::SE, 2, 128), 0);
  CHECK(m.layer_name(0) == "stem");
  CHECK(m.layer_name(m.layer_count() - 1) == "head");
  CHECK(m.last_block_name() == "stage3.block17");
  CHECK(m.layer_index("stage2.block0") == 19);
  CHECK_THROWS_AS((void)m.layer_index("stage4.block0"), InvalidArgument);
  std::vector<std::string> names;
  for (const auto& p : m.parameters()) names.push_back(p.name);
  CHECK(std::find(names.begin(), names.end(), "stage3.block8.attention.lsas.gamma2") != names.end());
  CHECK(std::find(names.begin(), names.end(), "stage2.block8.attention.lsas.gamma1") == names.end());
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c;
  c.depth = 100;
  CHECK_THROWS_AS(build_model<float>(c), ConfigError);
  c.depth = 164;
  c.num_classes = 1;
  CHECK_THROWS_AS(build_model<float>(c), ConfigError);
  c.num_classes = 10;
  c.attention = AttentionKind::SE;
  c.lsas_order = -1;
  CHECK_THROWS_AS(build_model<float>(c), ConfigError);
  // Order and threshold are ignored without attention.
  c.attention = AttentionKind::None;
  CHECK_NOTHROW(build_model<float>(c));
}

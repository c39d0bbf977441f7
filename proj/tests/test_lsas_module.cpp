#include <doctest.h>

#include "lsas/lsas_module.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::check_layer_gradients;
using lsas::test::max_abs_diff;
using lsas::test::random_tensor;

namespace {

// g = identity on the pooled descriptor.
template <class T>
class PooledIdentity final : public BaseAttention<T> {
 public:
  explicit PooledIdentity(int c) : c_(c) {}
  [[nodiscard]] AttentionKind kind() const override { return AttentionKind::SE; }
  [[nodiscard]] int channels() const override { return c_; }
  Tensor<T> logits(const Tensor<T>& x, Mode mode) override { return pool_.forward(x, mode); }
  Tensor<T> logits_backward(const Tensor<T>& g) override { return pool_.backward(g); }

 private:
  int c_;
  GlobalAvgPool<T> pool_;
};

const AttentionKind kKinds[] = {AttentionKind::SE, AttentionKind::CBAM, AttentionKind::SRM, AttentionKind::ECA};

}  // namespace

TEST_CASE("order 0 with an open gate reproduces the unwrapped module") {
  for (auto kind : kKinds) {
    for (int c : {16, 64, 256}) {
      CAPTURE(to_string(kind));
      CAPTURE(c);
      Rng init_a(c), init_b(c), data(c + 1);
      LSASModule<float> wrapped(make_attention<float>(kind, c, {}, init_a), SubAttentionChain<float>::identity(0, c),
                                GateConfig{0});
      auto plain = make_attention<float>(kind, c, {}, init_b);
      for (Mode mode : {Mode::Train, Mode::Inference}) {
        const auto x = random_tensor<float>({2, c, 4, 4}, data, -2.0, 2.0);
        CHECK(max_abs_diff(wrapped.forward(x, mode), apply_standalone(*plain, x, mode)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("closed gate is the identity and never runs the base operator") {
  Rng rng(8);
  LSASModule<float> m(make_attention<float>(AttentionKind::SE, 64, {}, rng), SubAttentionChain<float>::identity(2, 64),
                      GateConfig{128});
  CHECK_FALSE(m.gate_open());
  const auto x = random_tensor<float>({3, 64, 2, 2}, rng);
  const auto y = m.forward(x, Mode::Train);
  CHECK(y.storage() == x.storage());
  CHECK(m.backward(y).storage() == y.storage());
  CHECK(m.base_evaluations() == 0);

  LSASModule<float> boundary(make_attention<float>(AttentionKind::SE, 128, {}, rng),
                             SubAttentionChain<float>::identity(1, 128), GateConfig{128});
  CHECK_FALSE(boundary.gate_open());
}

TEST_CASE("all-zero input stays zero") {
  LSASModule<double> m(std::make_unique<PooledIdentity<double>>(1), SubAttentionChain<double>::identity(1, 1),
                       GateConfig{0});
  const FeatureMap<double> x({1, 2, 2}, 0.0);
  const auto y = lsas_forward(x, m);
  CHECK(y.shape() == x.shape());
  CHECK(y.storage() == std::vector<double>(4, 0.0));
}

TEST_CASE("a constant map is scaled by the composed multiplier") {
  LSASModule<double> m(std::make_unique<PooledIdentity<double>>(1), SubAttentionChain<double>(1, {{{0.5}, {0.2}}}),
                       GateConfig{0});
  const auto y = lsas_forward(FeatureMap<double>({1, 2, 2}, 1.0), m);
  const double expected = test::reference_sigmoid(1.0) * test::reference_sigmoid(0.7);
  for (double v : y.values()) CHECK(v == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("channel mismatch is rejected") {
  Rng rng(1);
  LSASModule<double> m(make_attention<double>(AttentionKind::ECA, 16, {}, rng),
                       SubAttentionChain<double>::identity(1, 16), GateConfig{0});
  CHECK_THROWS_AS(m.forward(Tensor<double>({1, 8, 2, 2}), Mode::Train), InvalidArgument);
  CHECK_THROWS_AS(LSASModule<double>(make_attention<double>(AttentionKind::ECA, 16, {}, rng),
                                     SubAttentionChain<double>::identity(1, 8), GateConfig{0}),
                  InvalidArgument);
}

TEST_CASE("LSAS module gradients match central differences") {
  for (auto kind : kKinds) {
    for (int order : {0, 1, 3}) {
      CAPTURE(to_string(kind));
      CAPTURE(order);
      Rng rng(100 + order);
      auto chain = SubAttentionChain<double>::identity(order, 16);
      std::uniform_real_distribution<double> d(-1.0, 1.5);
      for (int i = 1; i <= order; ++i) {
        for (auto& g : chain.level(i).gamma) g = d(rng);
        for (auto& b : chain.level(i).beta) b = d(rng);
      }
      LSASModule<double> m(make_attention<double>(kind, 16, {.se_reduction = 4}, rng), chain, GateConfig{0});
      const auto r = check_layer_gradients(m, random_tensor<double>({3, 16, 3, 3}, rng), Mode::Train, rng, 1e-5, 32);
      CHECK_MESSAGE(r.worst < 1e-4, r.where);
    }
  }
}

TEST_CASE("chain parameters are exposed per level and reflect updates") {
  Rng rng(2);
  LSASModule<double> m(make_attention<double>(AttentionKind::SE, 32, {}, rng), SubAttentionChain<double>::identity(2, 32),
                       GateConfig{16});
  ParamList<double> params;
  m.parameters("blk", params);
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  CHECK(std::count(names.begin(), names.end(), "blk.lsas.gamma1") == 1);
  CHECK(std::count(names.begin(), names.end(), "blk.lsas.beta2") == 1);
  for (auto& p : params) {
    if (p.name == "blk.lsas.beta2") p.value->fill(0.75);
  }
  CHECK(m.chain().level(2).beta == std::vector<double>(32, 0.75));
}

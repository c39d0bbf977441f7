#include <doctest.h>

#include "lsas/base_attention.hpp"
#include "lsas/errors.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::random_tensor;

TEST_CASE("global average pool") {
  CHECK(global_average_pool(Tensor<double>({3, 2, 5}, 3.5)) == std::vector<double>(3, 3.5));
  CHECK(global_average_pool(Tensor<double>({1, 2, 2}, {1, 2, 3, 4})) == std::vector<double>{2.5});
  CHECK(global_average_pool(Tensor<double>({2, 1, 1}, {-7.0, 0.125})) == std::vector<double>{-7.0, 0.125});
  CHECK_THROWS_AS(global_average_pool(Tensor<double>({2, 0, 3})), InvalidArgument);

  Rng rng(2);
  const auto x = random_tensor<double>({3, 4, 2, 5}, rng);
  const auto pooled = global_average_pool_batch(x);
  REQUIRE(pooled.shape() == std::vector<int>{3, 4});
  for (int n = 0; n < 3; ++n) {
    for (int c = 0; c < 4; ++c) {
      double s = 0;
      for (int y = 0; y < 2; ++y) {
        for (int w = 0; w < 5; ++w) s += x.at(n, c, y, w);
      }
      CHECK(pooled[static_cast<std::size_t>(n) * 4 + c] == doctest::Approx(s / 10));
    }
  }
}

TEST_CASE("se_logits") {
  SUBCASE("zero squeeze weights give zero logits") {
    SEWeights<double> w{Tensor<double>({2, 4}), Tensor<double>({2}), Tensor<double>({4, 2}, 0.7), Tensor<double>({4})};
    const std::vector<double> u{1, -2, 3, 4};
    CHECK(se_logits<double>(u, w) == std::vector<double>(4, 0.0));
  }
  SUBCASE("hand-computed two-channel case") {
    SEWeights<double> w{Tensor<double>({1, 2}, {1, 0}), Tensor<double>({1}), Tensor<double>({2, 1}, {1, 1}),
                        Tensor<double>({2})};
    const std::vector<double> u{3, -1};
    CHECK(se_logits<double>(u, w) == std::vector<double>{3, 3});
  }
}

TEST_CASE("standalone SE with zero logits halves the input") {
  Rng rng(4);
  SEAttention<double> se(32, 16, rng);
  se.fc2().weight().fill(0.0);
  se.fc2().bias().fill(0.0);
  const auto x = random_tensor<double>({2, 32, 3, 3}, rng);
  const auto y = apply_standalone<double>(se, x, Mode::Inference);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(0.5 * x[i]));
}

TEST_CASE("every kind preserves shape and emits C logits") {
  Rng rng(9);
  for (auto kind : {AttentionKind::SE, AttentionKind::CBAM, AttentionKind::SRM, AttentionKind::ECA}) {
    CAPTURE(to_string(kind));
    auto base = make_attention<float>(kind, 64, {}, rng);
    const auto x = random_tensor<float>({2, 64, 5, 3}, rng);
    CHECK(base->logits(x, Mode::Train).shape() == std::vector<int>{2, 64});
    CHECK(apply_standalone(*base, x, Mode::Train).shape() == x.shape());
    CHECK(apply_standalone(*base, x, Mode::Inference).shape() == x.shape());
  }
}

TEST_CASE("SE with full reduction keeps the logits length") {
  Rng rng(1);
  SEAttention<double> se(16, 16, rng);
  CHECK(se.hidden() == 1);
  CHECK(se.logits(random_tensor<double>({1, 16, 2, 2}, rng), Mode::Inference).shape() == std::vector<int>{1, 16});
}

TEST_CASE("indivisible reduction ratio is a configuration error") {
  Rng rng(1);
  CHECK_THROWS_AS(SEAttention<double>(24, 16, rng), ConfigError);
  CHECK_THROWS_AS(make_attention<double>(AttentionKind::CBAM, 40, {.se_reduction = 16}, rng), ConfigError);
  CHECK_THROWS_AS(make_attention<double>(AttentionKind::None, 16, {}, rng), ConfigError);
}

TEST_CASE("ECA logits depend only on a kernel-sized channel neighborhood") {
  Rng rng(6);
  ECAAttention<double> eca(32, 3, rng);
  const auto x = random_tensor<double>({1, 32, 2, 2}, rng);
  auto perturbed = x;
  for (int c = 10; c <= 14; ++c) {
    for (int i = 0; i < 4; ++i) perturbed[static_cast<std::size_t>(c) * 4 + i] += 0.8;
  }
  const auto a = eca.logits(x, Mode::Inference), b = eca.logits(perturbed, Mode::Inference);
  for (int c = 0; c < 32; ++c) {
    CAPTURE(c);
    if (c < 9 || c > 15) CHECK(a[c] == b[c]);
  }
  CHECK(a[12] != b[12]);
}

TEST_CASE("SRM style pooling uses the population standard deviation") {
  Rng rng(3);
  SRMAttention<double> srm(1, rng);
  srm.cfc_weight()[0] = 0.0;  // mean weight
  srm.cfc_weight()[1] = 1.0;  // std weight
  // Running BN statistics are (0, 1), so the logit is std / sqrt(1 + eps).
  const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 6});
  const double pop_std = std::sqrt(14.0 / 4.0 + 1e-5);
  CHECK(srm.logits(x, Mode::Inference)[0] == doctest::Approx(pop_std / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("attention kind names round-trip") {
  for (auto kind : {AttentionKind::None, AttentionKind::SE, AttentionKind::CBAM, AttentionKind::SRM, AttentionKind::ECA}) {
    CHECK(parse_attention_kind(to_string(kind)) == kind);
  }
  CHECK(parse_attention_kind("SE") == AttentionKind::SE);
  CHECK_THROWS_AS(parse_attention_kind("spa"), ConfigError);
}

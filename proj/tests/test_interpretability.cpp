#include <doctest.h>

#include <filesystem>

#include "lsas/interpretability.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::random_tensor;

namespace {

// feat: 1x1 conv (2 -> 3); head: ReLU -> GAP -> linear (3 -> 2).
Model<double> toy_model(Rng& rng) {
  Model<double> m;
  m.add("feat", std::make_unique<Conv2d<double>>(2, 3, 1, 1, 0, false, rng));
  auto head = std::make_unique<Sequential<double>>();
  head->add("relu", std::make_unique<ReLU<double>>());
  head->add("pool", std::make_unique<GlobalAvgPool<double>>());
  head->add("fc", std::make_unique<Linear<double>>(3, 2, true, rng));
  m.add("head", std::move(head));
  return m;
}

Heatmap reference_gradcam(Model<double>& m, const Tensor<double>& image, int cls) {
  Tensor<double> x = image;
  x.reshape({1, image.dim(0), image.dim(1), image.dim(2)});
  const Tensor<double> a = m.forward_range(x, 0, 1, Mode::Eval);
  const int k_count = a.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  auto score = [&](const Tensor<double>& act) { return m.forward_range(act, 1, 2, Mode::Eval)[cls]; };
  std::vector<double> cam(hw, 0.0);
  const double h = 1e-6;
  for (int k = 0; k < k_count; ++k) {
    double w = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      Tensor<double> ap = a, am = a;
      ap[k * hw + j] += h;
      am[k * hw + j] -= h;
      w += (score(ap) - score(am)) / (2 * h);
    }
    w /= static_cast<double>(hw);
    for (std::size_t j = 0; j < hw; ++j) cam[j] += w * a[k * hw + j];
  }
  double lo = 1e300, hi = -1e300;
  for (auto& v : cam) {
    v = std::max(v, 0.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (auto& v : cam) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return {a.dim(2), a.dim(3), cam, "feat", cls};
}

}  // namespace

TEST_CASE("gradcam matches a finite-difference reference on a toy network") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    auto m = toy_model(rng);
    const auto image = random_tensor<double>({2, 5, 4}, rng);
    for (int cls = 0; cls < 2; ++cls) {
      const auto got = gradcam(m, image, cls, "feat");
      const auto want = reference_gradcam(m, image, cls);
      REQUIRE(got.height == 5);
      REQUIRE(got.width == 4);
      CHECK(got.source_layer == "feat");
      CHECK(got.target_class == cls);
      for (std::size_t i = 0; i < got.values.size(); ++i) CHECK(got.values[i] == doctest::Approx(want.values[i]).epsilon(1e-6));
    }
    for (const auto& p : m.parameters()) {
      for (double g : p.grad->values()) CHECK(g == 0.0);
    }
  }
}

TEST_CASE("gradcam with zero class weights yields an all-zero map") {
  Rng rng(3);
  auto m = toy_model(rng);
  for (auto& p : m.parameters()) {
    if (p.name == "head.fc.weight") p.value->fill(0.0);
  }
  const auto hm = gradcam(m, random_tensor<double>({2, 4, 4}, rng), 1, "feat");
  CHECK(hm.values == std::vector<double>(16, 0.0));
}

TEST_CASE("single-channel gradcam is the normalized activation") {
  Rng rng(4);
  Model<double> m;
  auto conv = std::make_unique<Conv2d<double>>(1, 1, 1, 1, 0, false, rng);
  conv->weight().fill(2.0);
  m.add("feat", std::move(conv));
  auto head = std::make_unique<Sequential<double>>();
  head->add("pool", std::make_unique<GlobalAvgPool<double>>());
  auto fc = std::make_unique<Linear<double>>(1, 2, false, rng);
  fc->weight().fill(0.5);
  head->add("fc", std::move(fc));
  m.add("head", std::move(head));
  const Tensor<double> image({1, 2, 2}, {1, 3, 2, 5});
  const auto hm = gradcam(m, image, 0, "feat");
  CHECK(hm.values[0] == doctest::Approx(0.0));
  CHECK(hm.values[1] == doctest::Approx(0.5));
  CHECK(hm.values[2] == doctest::Approx(0.25));
  CHECK(hm.values[3] == doctest::Approx(1.0));
}

TEST_CASE("gradcam rejects bad layers and classes") {
  Rng rng(2);
  auto m = toy_model(rng);
  const auto image = random_tensor<double>({2, 3, 3}, rng);
  CHECK_THROWS_AS(gradcam(m, image, 0, "head"), InvalidArgument);
  CHECK_THROWS_AS(gradcam(m, image, 0, "nope"), InvalidArgument);
  CHECK_THROWS_AS(gradcam(m, image, 2, "feat"), InvalidArgument);
  CHECK_THROWS_AS(gradcam(m, image, -1, "feat"), InvalidArgument);
}

TEST_CASE("gradcam on a real backbone stays in the unit range") {
  ModelConfig cfg;
  cfg.depth = 83;
  cfg.attention = AttentionKind::SE;
  cfg.gate_mu = 128;
  auto m = build_model<float>(cfg, 9);
  Rng rng(9);
  const auto hm = gradcam(m, random_tensor<float>({3, 16, 16}, rng), 4, m.last_block_name());
  REQUIRE(hm.values.size() == 256);
  double hi = 0.0;
  for (double v : hm.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    hi = std::max(hi, v);
  }
  CHECK((hi == 1.0 || hi == 0.0));
}

TEST_CASE("focused region keeps the top fraction") {
  SUBCASE("ten ascending values") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto r = focused_region(v, 1, 10, 0.2);
    CHECK(r.count() == 2);
    CHECK(r.at(0, 8));
    CHECK(r.at(0, 9));
    CHECK(r.fraction == doctest::Approx(0.2));
  }
  SUBCASE("constant map selects everything") {
    std::vector<double> v(12, 0.4);
    CHECK(focused_region(v, 3, 4, 0.2).count() == 12);
  }
  SUBCASE("fraction one selects everything") {
    Rng rng(1);
    const auto t = random_tensor<double>({25}, rng);
    CHECK(focused_region(t.values(), 5, 5, 1.0).count() == 25);
  }
  SUBCASE("invalid fraction") {
    std::vector<double> v(4, 0.0);
    CHECK_THROWS_AS(focused_region(v, 2, 2, 0.0), InvalidArgument);
    CHECK_THROWS_AS(focused_region(v, 2, 2, 1.5), InvalidArgument);
    CHECK_THROWS_AS(focused_region(v, 2, 3, 0.2), InvalidArgument);
  }
}

TEST_CASE("focused region size and scale invariance") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 3 + trial % 7, w = 2 + trial % 5;
    auto t = random_tensor<double>({h * w}, rng);
    // Coarse quantization produces ties.
    if (trial % 2) {
      for (auto& v : t.values()) v = std::round(v * 3);
    }
    for (double f : {0.05, 0.2, 0.5}) {
      const auto r = focused_region(t.values(), h, w, f);
      CHECK(r.count() >= static_cast<std::size_t>(std::ceil(f * h * w - 1e-9)));
      auto scaled = t;
      for (auto& v : scaled.values()) v = 3.0 * v + 1.5;
      CHECK(focused_region(scaled.values(), h, w, f).bits == r.bits);
      // Every selected value dominates every unselected one.
      double min_in = 1e300, max_out = -1e300;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (r.bits[i]) min_in = std::min(min_in, t[i]);
        else max_out = std::max(max_out, t[i]);
      }
      CHECK(min_in > max_out);
    }
  }
}

TEST_CASE("bilinear resize") {
  const std::vector<double> src{0.0, 1.0, 2.0, 3.0};
  CHECK(resize_bilinear(src, 2, 2, 2, 2) == src);
  const auto up = resize_bilinear(src, 2, 2, 4, 4);
  REQUIRE(up.size() == 16);
  // Half-pixel centers: output (0,0) clamps to the source corner, (1,1) sits a quarter of the way in.
  CHECK(up[0] == doctest::Approx(0.0));
  CHECK(up[5] == doctest::Approx(0.1875 * 1.0 + 0.1875 * 2.0 + 0.0625 * 3.0));
  CHECK(up[15] == doctest::Approx(3.0));
  const std::vector<double> constant(9, 0.7);
  for (double v : resize_bilinear(constant, 3, 3, 7, 5)) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("unit-range normalization") {
  std::vector<double> v{2, 4, 6};
  normalize_unit_range(v);
  CHECK(v == std::vector<double>{0.0, 0.5, 1.0});
  std::vector<double> zeros(3, 0.0), pos(3, 2.0);
  normalize_unit_range(zeros);
  normalize_unit_range(pos);
  CHECK(zeros == std::vector<double>(3, 0.0));
  CHECK(pos == std::vector<double>(3, 1.0));
}

TEST_CASE("heatmap png round trip and naming") {
  CHECK(heatmap_filename("test", 12, 3) == "test_12_3.png");
  Heatmap h{2, 3, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, "x", 1};
  const auto path = std::filesystem::temp_directory_path() / "lsas_heatmap_roundtrip.png";
  write_heatmap_png(path, h);
  const auto back = read_heatmap_png(path);
  REQUIRE(back.height == 2);
  REQUIRE(back.width == 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(back.values[i] - h.values[i]) <= 0.5 / 255 + 1e-12);
  std::filesystem::remove(path);
}

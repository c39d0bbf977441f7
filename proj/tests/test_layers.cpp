#include <doctest.h>

#include "lsas/layers.hpp"
#include "test_util.hpp"

using namespace lsas;
using lsas::test::check_layer_gradients;
using lsas::test::random_tensor;

TEST_CASE("conv2d matches a direct convolution") {
  Rng rng(1);
  Conv2d<double> conv(2, 3, 3, 2, 1, true, rng);
  for (auto& b : conv.bias().values()) b = 0.25;
  const auto x = random_tensor<double>({2, 2, 5, 4}, rng);
  const auto y = conv.forward(x, Mode::Inference);
  REQUIRE(y.shape() == std::vector<int>{2, 3, 3, 2});
  for (int n = 0; n < 2; ++n) {
    for (int o = 0; o < 3; ++o) {
      for (int oy = 0; oy < 3; ++oy) {
        for (int ox = 0; ox < 2; ++ox) {
          double s = 0.25;
          for (int c = 0; c < 2; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
                s += conv.weight()[((static_cast<std::size_t>(o) * 2 + c) * 3 + ky) * 3 + kx] * x.at(n, c, iy, ix);
              }
            }
          }
          CHECK(y.at(n, o, oy, ox) == doctest::Approx(s).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("layer gradients match central differences") {
  Rng rng(7);
  SUBCASE("conv 3x3 stride 2") {
    Conv2d<double> l(3, 4, 3, 2, 1, true, rng);
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 3, 5, 5}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("conv 1x1 pointwise") {
    Conv2d<double> l(4, 3, 1, 1, 0, false, rng);
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 4, 3, 3}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("conv 7x7 stride 2 pad 3") {
    Conv2d<double> l(2, 2, 7, 2, 3, false, rng);
    CHECK(check_layer_gradients(l, random_tensor<double>({1, 2, 9, 8}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("batch norm, batch statistics") {
    BatchNorm2d<double> l(3);
    auto r = check_layer_gradients(l, random_tensor<double>({4, 3, 2, 3}, rng), Mode::Train, rng);
    CHECK_MESSAGE(r.worst < 1e-5, r.where);
  }
  SUBCASE("batch norm on (N, C)") {
    BatchNorm2d<double> l(5);
    CHECK(check_layer_gradients(l, random_tensor<double>({6, 5}, rng), Mode::Train, rng).worst < 1e-5);
  }
  SUBCASE("batch norm, running statistics") {
    BatchNorm2d<double> l(3);
    for (auto& v : l.running_mean().values()) v = 0.3;
    for (auto& v : l.running_var().values()) v = 1.7;
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 3, 2, 2}, rng), Mode::Eval, rng).worst < 1e-6);
  }
  SUBCASE("relu") {
    ReLU<double> l;
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 3, 4, 4}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("max pool") {
    MaxPool2d<double> l(3, 2, 1);
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 2, 6, 5}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("global average pool") {
    GlobalAvgPool<double> l;
    CHECK(check_layer_gradients(l, random_tensor<double>({2, 3, 3, 2}, rng), Mode::Train, rng).worst < 1e-6);
  }
  SUBCASE("linear") {
    Linear<double> l(6, 4, true, rng);
    CHECK(check_layer_gradients(l, random_tensor<double>({3, 6}, rng), Mode::Train, rng).worst < 1e-6);
  }
}

TEST_CASE("batch norm running statistics use the unbiased variance") {
  BatchNorm2d<double> bn(1, 1e-5, 1.0);
  Tensor<double> x({4, 1}, std::vector<double>{1, 2, 3, 6});
  (void)bn.forward(x, Mode::Train);
  CHECK(bn.running_mean()[0] == doctest::Approx(3.0));
  CHECK(bn.running_var()[0] == doctest::Approx(14.0 / 3.0));
}

TEST_CASE("inference mode leaves no backward state") {
  Rng rng(0);
  Linear<double> l(3, 2, false, rng);
  (void)l.forward(random_tensor<double>({1, 3}, rng), Mode::Inference);
  CHECK_THROWS(l.backward(Tensor<double>({1, 2})));
}

TEST_CASE("fan-in uniform initialization respects its bound") {
  Rng rng(5);
  Tensor<double> w({64, 27});
  fan_in_uniform(w, 27, rng);
  const double bound = std::sqrt(6.0 / 27.0);
  double lo = 1e9, hi = -1e9;
  for (double v : w.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -bound);
  CHECK(hi <= bound);
  CHECK(hi - lo > bound);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles/bicubic_oracle.hpp"
#include "support/testutil.hpp"
#include "vqa/resample.hpp"

using namespace vqa;
using vqa::testing::random_tensor;

TEST_CASE("cubic kernel basics") {
  CHECK(detail::bicubic_weight(0.0) == 1.0);
  CHECK(detail::bicubic_weight(1.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(detail::bicubic_weight(2.0) == 0.0);
  CHECK(detail::bicubic_weight(2.5) == 0.0);
  CHECK(detail::bicubic_weight(-0.5) == detail::bicubic_weight(0.5));
  // Partition of unity: the four taps around any phase t sum to 1.
  for (double t : {0.0, 0.1, 0.25, 0.5, 0.77, 0.999}) {
    double s = 0.0;
    for (int k = -1; k <= 2; ++k)
      s += detail::bicubic_weight(t - static_cast<double>(k));
    CHECK(s == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("constant images stay constant under resize") {
  Tensor img = Tensor::full({2, 7, 9}, 0.4);
  Tensor out = bicubic_resize(img, 3, 5);
  REQUIRE(out.shape() == Shape{2, 3, 5});
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out[i] == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("resize output is clamped to [0,1]") {
  // A hard step excites overshoot; the clamp must absorb it.
  Tensor img({1, 4, 8});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 8; ++x) img.at3(0, y, x) = x < 4 ? 0.0 : 1.0;
  Tensor out = bicubic_resize(img, 4, 16);
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out[i] >= 0.0);
    CHECK(out[i] <= 1.0);
  }
}

TEST_CASE("separable implementation matches the direct 2D oracle") {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<int64_t> dim(3, 24);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t h = dim(gen), w = dim(gen);
    const int64_t oh = dim(gen), ow = dim(gen);
    Tensor img = random_tensor(gen, {3, h, w}, 0.0, 1.0);
    Tensor got = bicubic_resize(img, oh, ow);
    Tensor expect = vqa::testing::bicubic_oracle(img, oh, ow);
    REQUIRE(got.shape() == expect.shape());
    double worst = 0.0;
    for (int64_t i = 0; i < got.numel(); ++i)
      worst = std::max(worst, std::fabs(got[i] - expect[i]));
    INFO(h << "x" << w << " -> " << oh << "x" << ow);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("downscale then upscale stays near the original smooth image") {
  Tensor img({1, 16, 16});
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x)
      img.at3(0, y, x) = 0.5 + 0.4 * std::sin(0.3 * y) * std::cos(0.25 * x);
  Tensor down = bicubic_resize(img, 8, 8);
  Tensor up = bicubic_resize(down, 16, 16);
  double err = 0.0;
  for (int64_t i = 0; i < img.numel(); ++i)
    err += std::fabs(up[i] - img[i]) / static_cast<double>(img.numel());
  CHECK(err < 0.05);
}

TEST_CASE("resize validates its arguments") {
  CHECK_THROWS_AS(bicubic_resize(Tensor({2, 3}), 4, 4), DataError);
  CHECK_THROWS_AS(bicubic_resize(Tensor({1, 4, 4}), 0, 4), DataError);
}

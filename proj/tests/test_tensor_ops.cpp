#include <cmath>
#include <cstring>
#include <random>

#include "amam/gradcheck.hpp"
#include "amam/ops.hpp"
#include "doctest.h"

using namespace amam;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

Tensor identity_kernel_1x1(int channels) {
  Tensor k = Tensor::zeros(Shape{channels, channels, 1, 1});
  for (int c = 0; c < channels; ++c) k.at(c, c, 0, 0) = 1.0;
  return k;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  std::mt19937_64 rng(1);
  Tensor x = Tensor::uniform(Shape{2, 3, 5, 4}, -2.0, 2.0, rng);
  Tensor y = conv2d(x, identity_kernel_1x1(3), Tensor::zeros(Shape{1, 3, 1, 1}), 1, 0);
  CHECK(bits_equal(x, y));
}

TEST_CASE("conv2d shape arithmetic") {
  std::mt19937_64 rng(2);
  Tensor x = Tensor::uniform(Shape{1, 3, 8, 8}, -1.0, 1.0, rng);
  Tensor k = Tensor::uniform(Shape{16, 3, 3, 3}, -1.0, 1.0, rng);
  Tensor y = conv2d(x, k, Tensor::zeros(Shape{1, 16, 1, 1}), 1, 1);
  CHECK(y.shape() == Shape{1, 16, 8, 8});
}

TEST_CASE("conv2d hand summation: all-ones 1x1 over two channels") {
  Tensor x = Tensor::full(Shape{1, 2, 2, 2}, 1.0);
  Tensor k = Tensor::full(Shape{1, 2, 1, 1}, 1.0);
  Tensor y = conv2d(x, k, Tensor::zeros(Shape{1, 1, 1, 1}), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (int p = 0; p < 4; ++p) CHECK(y.data()[p] == 2.0);
}

TEST_CASE("conv2d errors name the offending dimension") {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::uniform(Shape{1, 3, 8, 8}, -1.0, 1.0, rng);
  Tensor k = Tensor::uniform(Shape{4, 5, 3, 3}, -1.0, 1.0, rng);
  CHECK_THROWS_WITH_AS(conv2d(x, k, Tensor::zeros(Shape{1, 4, 1, 1}), 1, 1),
                       doctest::Contains("channels"), ShapeError);

  Tensor small = Tensor::uniform(Shape{1, 3, 2, 2}, -1.0, 1.0, rng);
  Tensor big_k = Tensor::uniform(Shape{4, 3, 5, 5}, -1.0, 1.0, rng);
  CHECK_THROWS_WITH_AS(conv2d(small, big_k, Tensor::zeros(Shape{1, 4, 1, 1}), 1, 0),
                       doctest::Contains("degenerate"), ShapeError);
}

TEST_CASE("batchnorm2d: identity statistics pass the input through") {
  std::mt19937_64 rng(4);
  Tensor x = Tensor::uniform(Shape{2, 3, 4, 4}, -2.0, 2.0, rng);
  Tensor gamma = Tensor::full(Shape{1, 3, 1, 1}, 1.0);
  Tensor beta = Tensor::zeros(Shape{1, 3, 1, 1});
  Tensor mean = Tensor::zeros(Shape{1, 3, 1, 1});
  Tensor var = Tensor::full(Shape{1, 3, 1, 1}, 1.0);
  Tensor y = batchnorm2d(x, gamma, beta, mean, var, 1e-12, BnMode::Eval);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-9));
  }
}

TEST_CASE("batchnorm2d: zero gamma broadcasts beta") {
  std::mt19937_64 rng(5);
  Tensor x = Tensor::uniform(Shape{1, 2, 3, 3}, -5.0, 5.0, rng);
  Tensor gamma = Tensor::zeros(Shape{1, 2, 1, 1});
  Tensor beta = Tensor::from_vector(Shape{1, 2, 1, 1}, {0.25, -1.5});
  Tensor mean = Tensor::zeros(Shape{1, 2, 1, 1});
  Tensor var = Tensor::full(Shape{1, 2, 1, 1}, 1.0);
  Tensor y = batchnorm2d(x, gamma, beta, mean, var, 1e-5, BnMode::Eval);
  for (int p = 0; p < 9; ++p) {
    CHECK(y.at(0, 0, p / 3, p % 3) == 0.25);
    CHECK(y.at(0, 1, p / 3, p % 3) == -1.5);
  }
}

TEST_CASE("batchnorm2d train mode normalizes with population statistics") {
  // channel values {1,3}: mean 2, population variance 1 -> normalized {-1,+1}
  Tensor x = Tensor::from_vector(Shape{1, 1, 1, 2}, {1.0, 3.0});
  Tensor gamma = Tensor::full(Shape{1, 1, 1, 1}, 2.0);
  Tensor beta = Tensor::zeros(Shape{1, 1, 1, 1});
  Tensor mean = Tensor::zeros(Shape{1, 1, 1, 1});
  Tensor var = Tensor::full(Shape{1, 1, 1, 1}, 1.0);
  Tensor y = batchnorm2d(x, gamma, beta, mean, var, 1e-12, BnMode::Train, 0.5);
  CHECK(y.data()[0] == doctest::Approx(-2.0).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(2.0).epsilon(1e-6));
  // running stats moved halfway toward the batch statistics
  CHECK(mean.data()[0] == doctest::Approx(1.0));
  CHECK(var.data()[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(
      batchnorm2d(x, Tensor::zeros(Shape{1, 2, 1, 1}), beta, mean, var, 1e-5, BnMode::Eval),
      ShapeError);
}

TEST_CASE("activation values") {
  Tensor x = Tensor::from_vector(Shape{1, 1, 1, 3}, {0.0, -5.0, 5.0});
  Tensor r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 0.0);
  CHECK(r.data()[2] == 5.0);

  Tensor s = silu(Tensor::from_vector(Shape{1, 1, 1, 2}, {0.0, 1.0}));
  CHECK(s.data()[0] == 0.0);
  CHECK(s.data()[1] == doctest::Approx(0.731059).epsilon(1e-5));
}

TEST_CASE("upsample_nearest2x replicates cells") {
  Tensor one = Tensor::full(Shape{1, 1, 1, 1}, 7.0);
  Tensor up = upsample_nearest2x(one);
  REQUIRE(up.shape() == Shape{1, 1, 2, 2});
  for (int p = 0; p < 4; ++p) CHECK(up.data()[p] == 7.0);

  Tensor grid = Tensor::from_vector(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor up2 = upsample_nearest2x(grid);
  CHECK(up2.at(0, 0, 0, 0) == 1.0);
  CHECK(up2.at(0, 0, 0, 1) == 1.0);
  CHECK(up2.at(0, 0, 1, 1) == 1.0);
  CHECK(up2.at(0, 0, 0, 2) == 2.0);
  CHECK(up2.at(0, 0, 2, 0) == 3.0);
  CHECK(up2.at(0, 0, 3, 3) == 4.0);
}

TEST_CASE("downsample_avg2x: means, shapes, odd-dimension error") {
  Tensor block = Tensor::from_vector(Shape{1, 1, 2, 2}, {1, 3, 5, 7});
  CHECK(downsample_avg2x(block).data()[0] == 4.0);

  std::mt19937_64 rng(6);
  CHECK(downsample_avg2x(Tensor::uniform(Shape{1, 4, 8, 8}, -1, 1, rng)).shape() ==
        Shape{1, 4, 4, 4});
  CHECK(downsample_avg2x(Tensor::full(Shape{1, 2, 4, 4}, 3.5)).data()[0] == 3.5);
  CHECK_THROWS_AS(downsample_avg2x(Tensor::zeros(Shape{1, 1, 3, 4})), ShapeError);
}

TEST_CASE("downsample inverts nearest upsample on random tensors") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    std::uniform_int_distribution<int> dim(1, 6);
    Tensor x = Tensor::uniform(Shape{dim(rng), dim(rng), dim(rng), dim(rng)}, -3.0, 3.0, rng);
    CHECK(bits_equal(downsample_avg2x(upsample_nearest2x(x)), x));
  }
}

TEST_CASE("concat/split channel layout and round trips") {
  std::mt19937_64 rng(8);
  Tensor a = Tensor::uniform(Shape{1, 2, 3, 3}, -1, 1, rng);
  Tensor b = Tensor::uniform(Shape{1, 3, 3, 3}, -1, 1, rng);
  CHECK(bits_equal(concat_channels({a}), a));
  Tensor joined = concat_channels({a, b});
  REQUIRE(joined.shape() == Shape{1, 5, 3, 3});
  for (int p = 0; p < 9; ++p) {
    CHECK(joined.at(0, 2, p / 3, p % 3) == b.at(0, 0, p / 3, p % 3));
  }

  Tensor x = Tensor::uniform(Shape{2, 8, 2, 5}, -1, 1, rng);
  auto parts = split_channels(x, 4);
  REQUIRE(parts.size() == 4);
  CHECK(parts[0].shape() == Shape{2, 2, 2, 5});
  CHECK(bits_equal(concat_channels(parts), x));
  CHECK(bits_equal(split_channels(x, 1)[0], x));
  CHECK_THROWS_AS(split_channels(x, 3), ShapeError);
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros(Shape{1, 1, 4, 3})}), ShapeError);
}

TEST_CASE("softmax_lastdim closed-form rows") {
  Tensor equal = softmax_lastdim(Tensor::full(Shape{1, 1, 1, 4}, 3.25));
  for (int j = 0; j < 4; ++j) CHECK(equal.data()[j] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor big = softmax_lastdim(Tensor::from_vector(Shape{1, 1, 1, 2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] > 0.999999);

  Tensor ln3 = softmax_lastdim(Tensor::from_vector(Shape{1, 1, 1, 2}, {0.0, std::log(3.0)}));
  CHECK(ln3.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(ln3.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("matmul identity, shape, hand arithmetic") {
  std::mt19937_64 rng(9);
  Tensor a = Tensor::uniform(Shape{1, 1, 3, 3}, -1, 1, rng);
  Tensor eye = Tensor::zeros(Shape{1, 1, 3, 3});
  for (int i = 0; i < 3; ++i) eye.at(0, 0, i, i) = 1.0;
  CHECK(bits_equal(matmul(eye, a), a));

  CHECK(matmul(Tensor::zeros(Shape{1, 1, 2, 3}), Tensor::zeros(Shape{1, 1, 3, 4})).shape() ==
        Shape{1, 1, 2, 4});

  Tensor lhs = Tensor::from_vector(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor rhs = Tensor::from_vector(Shape{1, 1, 2, 1}, {5, 6});
  Tensor product = matmul(lhs, rhs);
  CHECK(product.at(0, 0, 0, 0) == 17.0);
  CHECK(product.at(0, 0, 1, 0) == 39.0);

  CHECK_THROWS_AS(matmul(lhs, Tensor::zeros(Shape{1, 1, 3, 2})), ShapeError);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2x") {
  std::mt19937_64 rng(10);
  Tensor x = Tensor::uniform(Shape{1, 2, 3, 3}, -2, 2, rng, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(x.backward(), ShapeError);  // non-scalar root
}

TEST_CASE("forward ops stay finite on finite inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::uniform(Shape{1, 4, 4, 4}, -50.0, 50.0, rng);
    Tensor k = Tensor::uniform(Shape{4, 4, 3, 3}, -5.0, 5.0, rng);
    Tensor y = silu(conv2d(x, k, Tensor::zeros(Shape{1, 4, 1, 1}), 1, 1));
    y = downsample_avg2x(upsample_nearest2x(y));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::isfinite(y.data()[i]));
  }
}

TEST_CASE("scale_by and affine drive the adaptive fusion arithmetic") {
  std::mt19937_64 rng(12);
  Tensor x = Tensor::uniform(Shape{1, 2, 2, 2}, -1, 1, rng);
  Tensor s = Tensor::scalar(0.25);
  Tensor scaled = scale_by(x, s);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(scaled.data()[i] == 0.25 * x.data()[i]);
  Tensor shifted = affine(Tensor::scalar(0.3), -1.0, 1.0);
  CHECK(shifted.item() == doctest::Approx(0.7).epsilon(1e-15));
}

#include <cstring>
#include <random>

#include "amam/gradcheck.hpp"
#include "amam/me_block.hpp"
#include "doctest.h"

using namespace amam;

namespace {

// CBR configured to be the identity on positive inputs: identity 1x1 kernel,
// zero bias, unit BN statistics with negligible eps.
ConvBnAct identity_cbr(int channels) {
  ConvBnAct layer;
  Tensor k = Tensor::zeros(Shape{channels, channels, 1, 1}, true);
  for (int c = 0; c < channels; ++c) k.at(c, c, 0, 0) = 1.0;
  layer.kernel = k;
  layer.bias = Tensor::zeros(Shape{1, channels, 1, 1}, true);
  layer.bn_gamma = Tensor::full(Shape{1, channels, 1, 1}, 1.0, true);
  layer.bn_beta = Tensor::zeros(Shape{1, channels, 1, 1}, true);
  layer.bn_mean = Tensor::zeros(Shape{1, channels, 1, 1});
  layer.bn_var = Tensor::full(Shape{1, channels, 1, 1}, 1.0);
  layer.bn_eps = 1e-12;
  return layer;
}

}  // namespace

TEST_CASE("unify_current: identity composition on positive inputs") {
  std::mt19937_64 rng(200);
  MeBlockParams params = MeBlockParams::init(4, false, false, rng);
  params.cbr_cur = identity_cbr(4);
  Tensor x = Tensor::uniform(Shape{1, 4, 5, 5}, 0.5, 2.0, rng);
  Tensor y = unify_current(x, params);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-9));
  }
}

TEST_CASE("unify_current preserves the spec shape and zeros") {
  std::mt19937_64 rng(201);
  MeBlockParams params = MeBlockParams::init(64, false, false, rng);
  Tensor x = Tensor::uniform(Shape{1, 64, 32, 32}, -1, 1, rng);
  CHECK(unify_current(x, params).shape() == Shape{1, 64, 32, 32});

  // zero kernel, zero bias, beta 0: ReLU(0) = 0 everywhere
  MeBlockParams zeroed = MeBlockParams::init(4, false, false, rng);
  zeroed.cbr_cur.kernel = Tensor::zeros(Shape{4, 4, 1, 1}, true);
  Tensor y = unify_current(Tensor::uniform(Shape{2, 4, 3, 3}, -1, 1, rng), zeroed);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);

  CHECK_THROWS_AS(unify_current(Tensor::zeros(Shape{1, 3, 4, 4}), zeroed), ShapeError);
}

TEST_CASE("unify_shallow: channel-sum oracle and shape contract") {
  std::mt19937_64 rng(202);
  MeBlockParams params = MeBlockParams::init(64, true, false, rng);
  CHECK(unify_shallow(Tensor::uniform(Shape{1, 32, 64, 64}, -1, 1, rng), params).shape() ==
        Shape{1, 64, 32, 32});

  // constant input, all-ones 1x1 kernel, identity BN: each output channel is
  // the sum over the 32 input channels, untouched by the 2x2 average
  MeBlockParams hand = MeBlockParams::init(64, true, false, rng);
  ConvBnAct ones = identity_cbr(64);
  ones.kernel = Tensor::full(Shape{64, 32, 1, 1}, 1.0, true);
  hand.cbr_shallow = ones;
  const double v = 0.5;
  Tensor y = unify_shallow(Tensor::full(Shape{1, 32, 8, 8}, v), hand);
  REQUIRE(y.shape() == Shape{1, 64, 4, 4});
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(32.0 * v).epsilon(1e-9));
  }

  Tensor zero_out = unify_shallow(Tensor::zeros(Shape{1, 32, 8, 8}), params);
  for (std::size_t i = 0; i < zero_out.numel(); ++i) CHECK(zero_out.data()[i] == 0.0);
}

TEST_CASE("unify_deep: shape contract and nearest replication") {
  std::mt19937_64 rng(203);
  MeBlockParams params = MeBlockParams::init(64, false, true, rng);
  CHECK(unify_deep(Tensor::uniform(Shape{1, 128, 16, 16}, -1, 1, rng), params).shape() ==
        Shape{1, 64, 32, 32});

  // a single nonzero input cell expands to a 2x2 block after upsampling
  MeBlockParams hand = MeBlockParams::init(2, false, true, rng);
  ConvBnAct pick = identity_cbr(2);
  pick.kernel = Tensor::zeros(Shape{2, 4, 1, 1}, true);
  pick.kernel.at(0, 0, 0, 0) = 1.0;
  pick.kernel.at(1, 1, 0, 0) = 1.0;
  hand.cbr_deep = pick;
  Tensor deep = Tensor::zeros(Shape{1, 4, 2, 2});
  deep.at(0, 0, 1, 1) = 3.0;
  Tensor y = unify_deep(deep, hand);
  REQUIRE(y.shape() == Shape{1, 2, 4, 4});
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(y.at(0, 0, 2, 3) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(y.at(0, 0, 3, 2) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(y.at(0, 0, 3, 3) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(y.at(0, 0, 0, 0) == 0.0);

  Tensor zero_out = unify_deep(Tensor::zeros(Shape{1, 128, 4, 4}), params);
  for (std::size_t i = 0; i < zero_out.numel(); ++i) CHECK(zero_out.data()[i] == 0.0);
}

TEST_CASE("me_forward: three-scale fusion keeps the current shape") {
  std::mt19937_64 rng(204);
  MeBlockParams params = MeBlockParams::init(64, true, true, rng);
  Tensor shallow = Tensor::uniform(Shape{1, 32, 64, 64}, -1, 1, rng);
  Tensor cur = Tensor::uniform(Shape{1, 64, 32, 32}, -1, 1, rng);
  Tensor deep = Tensor::uniform(Shape{1, 128, 16, 16}, -1, 1, rng);
  CHECK(me_forward(shallow, cur, deep, params).shape() == Shape{1, 64, 32, 32});
}

TEST_CASE("me_forward boundary configurations") {
  std::mt19937_64 rng(205);
  Tensor cur = Tensor::uniform(Shape{1, 64, 32, 32}, -1, 1, rng);
  Tensor deep = Tensor::uniform(Shape{1, 128, 16, 16}, -1, 1, rng);
  Tensor shallow = Tensor::uniform(Shape{1, 32, 64, 64}, -1, 1, rng);

  MeBlockParams no_shallow = MeBlockParams::init(64, false, true, rng);
  CHECK(no_shallow.fuse_in_channels() == 128);
  CHECK(me_forward(std::nullopt, cur, deep, no_shallow).shape() == cur.shape());

  MeBlockParams no_deep = MeBlockParams::init(64, true, false, rng);
  CHECK(me_forward(shallow, cur, std::nullopt, no_deep).shape() == cur.shape());

  MeBlockParams alone = MeBlockParams::init(64, false, false, rng);
  CHECK(alone.fuse_in_channels() == 64);
  CHECK(me_forward(std::nullopt, cur, std::nullopt, alone).shape() == cur.shape());

  // neighbor shape violations are named
  CHECK_THROWS_AS(me_forward(Tensor::zeros(Shape{1, 32, 60, 64}), cur, deep,
                             MeBlockParams::init(64, true, true, rng)),
                  ShapeError);
}

TEST_CASE("me_forward: all-zero inputs with zero-bias parameters give zeros") {
  std::mt19937_64 rng(206);
  MeBlockParams params = MeBlockParams::init(4, true, true, rng);
  Tensor out = me_forward(Tensor::zeros(Shape{1, 2, 8, 8}), Tensor::zeros(Shape{1, 4, 4, 4}),
                          Tensor::zeros(Shape{1, 8, 2, 2}), params);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("me_forward: randomized shape property over valid geometries") {
  std::mt19937_64 rng(207);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> half_c(1, 5), half_s(1, 5);
    const int c = 2 * half_c(rng);
    const int h = 2 * half_s(rng);
    const int w = 2 * half_s(rng);
    MeBlockParams params = MeBlockParams::init(c, true, true, rng);
    Tensor out = me_forward(Tensor::uniform(Shape{1, c / 2, 2 * h, 2 * w}, -1, 1, rng),
                            Tensor::uniform(Shape{1, c, h, w}, -1, 1, rng),
                            Tensor::uniform(Shape{1, 2 * c, h / 2, w / 2}, -1, 1, rng), params);
    CHECK(out.shape() == Shape{1, c, h, w});
  }
}

TEST_CASE("me_forward gradients reach every input and parameter") {
  std::mt19937_64 rng(208);
  MeBlockParams params = MeBlockParams::init(4, true, true, rng);
  Tensor shallow = Tensor::uniform(Shape{1, 2, 4, 4}, -1, 1, rng, true);
  Tensor cur = Tensor::uniform(Shape{1, 4, 2, 2}, -1, 1, rng, true);
  Tensor deep = Tensor::uniform(Shape{1, 8, 1, 1}, -1, 1, rng, true);
  Tensor w = Tensor::uniform(cur.shape(), 0.5, 1.5, rng);
  std::vector<Tensor> leaves{shallow, cur, deep};
  auto more = params.parameters();
  leaves.insert(leaves.end(), more.begin(), more.end());
  auto result = gradcheck(
      [&]() { return sum(mul(me_forward(shallow, cur, deep, params), w)); }, leaves);
  CHECK(result.max_rel_err < 1e-4);
}

#include <random>

#include "amam/gradcheck.hpp"
#include "amam/me_block.hpp"
#include "amam/ops.hpp"
#include "doctest.h"

using namespace amam;

TEST_CASE("gradcheck: linear function is exact to solver noise") {
  std::mt19937_64 rng(100);
  Tensor x = Tensor::uniform(Shape{1, 2, 3, 3}, -2, 2, rng, true);
  auto result = gradcheck([&]() { return sum(x); }, {x});
  CHECK(result.max_rel_err < 1e-9);
  CHECK(result.coords_checked == x.numel());
}

TEST_CASE("gradcheck: ReLU away from the kink") {
  std::mt19937_64 rng(101);
  Tensor x = Tensor::uniform(Shape{1, 2, 4, 4}, 0.2, 1.0, rng, true);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (flip(rng)) x.data()[i] = -x.data()[i];
  }
  auto result = gradcheck([&]() { return sum(relu(x)); }, {x});
  CHECK(result.max_rel_err < 1e-6);
  CHECK(result.coords_skipped == 0);
}

TEST_CASE("gradcheck: a coordinate crossing the ReLU kink is skipped") {
  Tensor x = Tensor::from_vector(Shape{1, 1, 1, 3}, {1.0, 1e-7, -1.0}, true);
  auto result = gradcheck([&]() { return sum(relu(x)); }, {x}, 1e-5);
  CHECK(result.coords_skipped == 1);
  CHECK(result.coords_checked == 2);
  CHECK(result.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: full ME forward within composite tolerance") {
  std::mt19937_64 rng(102);
  MeBlockParams params = MeBlockParams::init(4, true, true, rng);
  Tensor shallow = Tensor::uniform(Shape{1, 2, 8, 8}, -1, 1, rng, true);
  Tensor cur = Tensor::uniform(Shape{1, 4, 4, 4}, -1, 1, rng, true);
  Tensor deep = Tensor::uniform(Shape{1, 8, 2, 2}, -1, 1, rng, true);
  Tensor w = Tensor::uniform(cur.shape(), 0.5, 1.5, rng);
  auto result = gradcheck(
      [&]() { return sum(mul(me_forward(shallow, cur, deep, params), w)); },
      {shallow, cur, deep});
  CHECK(result.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck flags a wrong derivative") {
  // sigmoid applied forward but compared against d(sum(2x))/dx via a mismatched
  // objective: rebuild f with a different op than the analytic pass saw
  std::mt19937_64 rng(103);
  Tensor x = Tensor::uniform(Shape{1, 1, 2, 2}, 0.5, 1.5, rng, true);
  int calls = 0;
  auto f = [&]() -> Tensor {
    ++calls;
    // first (analytic) call: x^2; numeric calls: x^2 scaled, so slopes differ
    return calls == 1 ? sum(mul(x, x)) : scale(sum(mul(x, x)), 1.5);
  };
  auto result = gradcheck(f, {x});
  CHECK(result.max_rel_err > 0.1);
}

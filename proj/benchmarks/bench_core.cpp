#include <benchmark/benchmark.h>

#include <random>

#include "amam/aa_block.hpp"
#include "amam/detect_eval.hpp"
#include "amam/me_block.hpp"
#include "amam/pyramid.hpp"

using namespace amam;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(s, -1.0, 1.0, rng);
}

void BM_Conv2d3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  Tensor x = random_tensor(Shape{1, c, 32, 32}, 2);
  Tensor k = Tensor::uniform(Shape{c, c, 3, 3}, -0.1, 0.1, rng);
  Tensor b = Tensor::zeros(Shape{1, c, 1, 1});
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, k, b, 1, 1));
  }
}
BENCHMARK(BM_Conv2d3x3)->Arg(16)->Arg(32);

void BM_HeadAttention(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  AaHeadParams head;
  head.w_q = Tensor::uniform(Shape{1, 1, 16, 8}, -0.3, 0.3, rng);
  head.w_k = Tensor::uniform(Shape{1, 1, 16, 8}, -0.3, 0.3, rng);
  head.w_v = Tensor::uniform(Shape{1, 1, 16, 16}, -0.3, 0.3, rng);
  Tensor x = random_tensor(Shape{1, 16, side, side}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(head_attention(x, head, 8));
  }
}
BENCHMARK(BM_HeadAttention)->Arg(8)->Arg(16);

void BM_MeForward(benchmark::State& state) {
  std::mt19937_64 rng(5);
  MeBlockParams params = MeBlockParams::init(32, true, true, rng);
  Tensor shallow = random_tensor(Shape{1, 16, 32, 32}, 6);
  Tensor cur = random_tensor(Shape{1, 32, 16, 16}, 7);
  Tensor deep = random_tensor(Shape{1, 64, 8, 8}, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(me_forward(shallow, cur, deep, params));
  }
}
BENCHMARK(BM_MeForward);

void BM_AaForward(benchmark::State& state) {
  const int heads = static_cast<int>(state.range(0));
  std::mt19937_64 rng(9);
  AaBlockParams params = AaBlockParams::init(32, heads, FusionMode::Adaptive, rng);
  Tensor x = random_tensor(Shape{1, 32, 16, 16}, 10);
  for (auto _ : state) {
    benchmark::DoNotOptimize(aa_forward(x, params));
  }
}
BENCHMARK(BM_AaForward)->Arg(1)->Arg(4)->Arg(16);

void BM_AmamForward(benchmark::State& state) {
  AmamConfig cfg;
  cfg.levels = {16, 32, 64};
  cfg.heads = 4;
  cfg.seed = 11;
  AmamParams params = AmamParams::init(cfg);
  FeaturePyramid pyr;
  pyr.maps = {random_tensor(Shape{1, 16, 32, 32}, 12), random_tensor(Shape{1, 32, 16, 16}, 13),
              random_tensor(Shape{1, 64, 8, 8}, 14)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(amam_forward(pyr, cfg, params));
  }
}
BENCHMARK(BM_AmamForward);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> coord(0.0, 100.0), side(2.0, 10.0), score(0.0, 1.0);
  EvalData data;
  for (int i = 0; i < 20; ++i) {
    ImageEval image;
    image.id = "img" + std::to_string(i);
    for (int g = 0; g < 10; ++g) {
      const double x = coord(rng), y = coord(rng);
      image.gt.push_back(Box{x, y, x + side(rng), y + side(rng)});
    }
    for (int d = 0; d < 50; ++d) {
      const double x = coord(rng), y = coord(rng);
      image.det.push_back({image.id, Box{x, y, x + side(rng), y + side(rng)}, score(rng)});
    }
    data.push_back(std::move(image));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(average_precision(data, 0.5));
  }
}
BENCHMARK(BM_AveragePrecision);

}  // namespace

BENCHMARK_MAIN();

#include "amam/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace amam {

void LrSchedule::validate() const {
  if (total_iters < 1) throw ConfigError("schedule: total_iters must be >= 1");
  if (warmup_iters < 0 || warmup_iters >= total_iters) {
    throw ConfigError("schedule: warmup_iters must satisfy 0 <= warmup < total");
  }
  if (lr_init <= 0.0 || lr_final <= 0.0) throw ConfigError("schedule: learning rates must be > 0");
  if (lr_final > lr_init) throw ConfigError("schedule: lr_final must be <= lr_init");
  if (warmup_start_frac <= 0.0 || warmup_start_frac > 1.0) {
    throw ConfigError("schedule: warmup_start_frac must be in (0, 1]");
  }
}

double lr_at(int iter, const LrSchedule& s) {
  s.validate();
  if (iter < 0 || iter > s.total_iters) {
    throw ConfigError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(s.total_iters) + "]");
  }
  if (iter < s.warmup_iters) {
    const double start = s.warmup_start_frac * s.lr_init;
    const double t = static_cast<double>(iter) / static_cast<double>(s.warmup_iters);
    return start + (s.lr_init - start) * t;
  }
  const double t = static_cast<double>(iter - s.warmup_iters) /
                   static_cast<double>(s.total_iters - s.warmup_iters);
  return s.lr_final + 0.5 * (s.lr_init - s.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(std::vector<Tensor>& params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity) {
  if (velocity.size() != params.size()) {
    if (!velocity.empty()) {
      throw ConfigError("sgd_step: velocity state does not match parameter count");
    }
    velocity.resize(params.size());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<double>& v = velocity[i];
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) {
      throw ShapeError("sgd_step: velocity buffer " + std::to_string(i) +
                       " does not match parameter size");
    }
    const bool has_grad = p.has_grad();
    const double* g = has_grad ? p.grad().data() : nullptr;
    double* data = p.data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum * v[j] + (has_grad ? g[j] : 0.0);
      data[j] -= lr * v[j];
    }
  }
}

namespace {

struct Scene {
  Tensor image;                              // (1,1,64,64)
  std::vector<std::array<double, 4>> boxes;  // x_min, y_min, x_max, y_max in pixels
};

constexpr int kImageSide = 64;

Scene make_scene(std::mt19937_64& rng) {
  NoGradGuard no_grad;
  Scene scene;
  scene.image = Tensor::zeros(Shape{1, 1, kImageSide, kImageSide});
  std::uniform_real_distribution<double> noise(0.0, 0.2);
  double* px = scene.image.data();
  for (int i = 0; i < kImageSide * kImageSide; ++i) px[i] = noise(rng);

  std::uniform_int_distribution<int> count_dist(1, 3);
  std::uniform_int_distribution<int> size_dist(8, 20);
  std::uniform_real_distribution<double> bright(0.8, 1.0);
  const int count = count_dist(rng);
  for (int b = 0; b < count; ++b) {
    const int bw = size_dist(rng);
    const int bh = size_dist(rng);
    std::uniform_int_distribution<int> x_dist(0, kImageSide - bw);
    std::uniform_int_distribution<int> y_dist(0, kImageSide - bh);
    const int x0 = x_dist(rng);
    const int y0 = y_dist(rng);
    const double value = bright(rng);
    for (int y = y0; y < y0 + bh; ++y) {
      for (int x = x0; x < x0 + bw; ++x) px[y * kImageSide + x] = value;
    }
    scene.boxes.push_back({static_cast<double>(x0), static_cast<double>(y0),
                           static_cast<double>(x0 + bw), static_cast<double>(y0 + bh)});
  }
  return scene;
}

struct LevelTargets {
  Tensor objectness;  // (1,1,g,g) of 0/1
  Tensor offsets;     // (1,4,g,g): in-cell cx, cy and image-normalized w, h
  Tensor mask;        // (1,4,g,g): 1 at positive cells
};

LevelTargets make_targets(const Scene& scene, int stride) {
  NoGradGuard no_grad;
  const int g = kImageSide / stride;
  LevelTargets t;
  t.objectness = Tensor::zeros(Shape{1, 1, g, g});
  t.offsets = Tensor::zeros(Shape{1, 4, g, g});
  t.mask = Tensor::zeros(Shape{1, 4, g, g});
  for (const auto& box : scene.boxes) {
    const double cx = 0.5 * (box[0] + box[2]);
    const double cy = 0.5 * (box[1] + box[3]);
    const int cell_x = std::min(g - 1, static_cast<int>(cx / stride));
    const int cell_y = std::min(g - 1, static_cast<int>(cy / stride));
    t.objectness.at(0, 0, cell_y, cell_x) = 1.0;
    t.offsets.at(0, 0, cell_y, cell_x) = cx / stride - cell_x;
    t.offsets.at(0, 1, cell_y, cell_x) = cy / stride - cell_y;
    t.offsets.at(0, 2, cell_y, cell_x) = (box[2] - box[0]) / kImageSide;
    t.offsets.at(0, 3, cell_y, cell_x) = (box[3] - box[1]) / kImageSide;
    for (int c = 0; c < 4; ++c) t.mask.at(0, c, cell_y, cell_x) = 1.0;
  }
  return t;
}

}  // namespace

TrainTrace toy_train(const AmamConfig& cfg, int steps, std::uint64_t seed) {
  if (steps < 1) throw ConfigError("toy_train: steps must be >= 1");
  cfg.validate();

  std::mt19937_64 init_rng(cfg.seed);
  ToyBackboneParams backbone = ToyBackboneParams::init(cfg.levels, init_rng);
  AmamParams amam = AmamParams::init(cfg);
  ToyHeadParams head = ToyHeadParams::init(cfg.levels, init_rng);

  std::vector<Tensor> params = backbone.parameters();
  {
    auto more = amam.parameters(cfg);
    params.insert(params.end(), more.begin(), more.end());
    more = head.parameters();
    params.insert(params.end(), more.begin(), more.end());
  }

  LrSchedule schedule;
  schedule.total_iters = steps;
  schedule.warmup_iters = std::min(10, steps / 10);
  schedule.validate();

  std::mt19937_64 data_rng(seed);
  std::vector<std::vector<double>> velocity;
  std::vector<int> strides;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) strides.push_back(2 << i);

  TrainTrace trace;
  for (int step = 0; step < steps; ++step) {
    Scene scene = make_scene(data_rng);

    FeaturePyramid pyr = toy_backbone(scene.image, backbone, BnMode::Train);
    pyr = amam_forward(pyr, cfg, amam, BnMode::Train);
    std::vector<Tensor> maps = toy_head(pyr, head);

    Tensor loss;
    for (std::size_t level = 0; level < maps.size(); ++level) {
      LevelTargets targets = make_targets(scene, strides[level]);
      std::vector<Tensor> channels = split_channels(maps[level], 5);
      Tensor obj_logits = channels[0];
      Tensor offsets = concat_channels({channels[1], channels[2], channels[3], channels[4]});
      Tensor level_loss = add(bce_with_logits_mean(obj_logits, targets.objectness),
                              masked_l1_mean(offsets, targets.offsets, targets.mask));
      loss = loss.valid() ? add(loss, level_loss) : level_loss;
    }
    loss = scale(loss, 1.0 / static_cast<double>(maps.size()));

    for (Tensor& p : params) p.zero_grad();
    loss.backward();
    const double lr = lr_at(step, schedule);
    sgd_step(params, lr, schedule.momentum, velocity);

    trace.loss.push_back(loss.item());
    trace.lr.push_back(lr);
  }
  return trace;
}

}  // namespace amam

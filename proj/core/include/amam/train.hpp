#pragma once

#include <cstdint>
#include <vector>

#include "amam/pyramid.hpp"

namespace amam {

/// Warm-up followed by cosine annealing. The warm-up ramps linearly from
/// warmup_start_frac * lr_init up to lr_init over warmup_iters iterations; the
/// cosine phase then decays lr_init -> lr_final over the remaining iterations.
struct LrSchedule {
  int warmup_iters = 0;
  double lr_init = 0.01;
  double lr_final = 0.002;
  int total_iters = 1;
  double momentum = 0.937;
  double warmup_start_frac = 0.1;

  void validate() const;
};

/// Learning rate for iter in [0, total_iters]. lr_at(warmup_iters) == lr_init
/// and lr_at(total_iters) == lr_final exactly.
double lr_at(int iter, const LrSchedule& s);

/// Classical momentum: v <- momentum * v + g; p <- p - lr * v. Parameters with
/// no gradient buffer are treated as having zero gradient. velocity must hold
/// one buffer per parameter (zero-filled on first use).
void sgd_step(std::vector<Tensor>& params, double lr, double momentum,
              std::vector<std::vector<double>>& velocity);

struct TrainTrace {
  std::vector<double> loss;  // one entry per step
  std::vector<double> lr;
};

/// Desk-scale training demo: synthetic 64x64 single-channel scenes with 1-3
/// bright rectangles on noise, backbone -> AMAM -> head, BCE on objectness
/// plus masked L1 on box offsets at positive cells. Deterministic per seed.
TrainTrace toy_train(const AmamConfig& cfg, int steps, std::uint64_t seed);

}  // namespace amam

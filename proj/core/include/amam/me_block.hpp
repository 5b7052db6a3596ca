#pragma once

#include <optional>
#include <random>
#include <vector>

#include "amam/conv_bn_act.hpp"

namespace amam {

/// Parameters of the multi-hierarchical enhanced block for one pyramid level
/// with current channel count C. Branch CBRs are channel projections (1x1 by
/// default); the fusion CBR mixes spatially (3x3, padding 1 by default) and
/// maps k*C concatenated channels back to C, where k counts present branches.
struct MeBlockParams {
  int channels = 0;  // C of the current level
  ConvBnAct cbr_cur;                      // C   -> C
  std::optional<ConvBnAct> cbr_shallow;   // C/2 -> C
  std::optional<ConvBnAct> cbr_deep;      // 2C  -> C
  ConvBnAct cbr_fuse;                     // kC  -> C

  static MeBlockParams init(int channels, bool has_shallow, bool has_deep,
                            std::mt19937_64& rng, int branch_ksize = 1, int fuse_ksize = 3);

  std::vector<Tensor> parameters() const;
  int fuse_in_channels() const { return cbr_fuse.in_channels(); }
};

/// Branch transforms: each unifies one scale to the current level's (C, H, W).
Tensor unify_current(const Tensor& f_cur, const MeBlockParams& p, BnMode mode = BnMode::Eval);
Tensor unify_shallow(const Tensor& f_shallow, const MeBlockParams& p, BnMode mode = BnMode::Eval);
Tensor unify_deep(const Tensor& f_deep, const MeBlockParams& p, BnMode mode = BnMode::Eval);

/// Fused feature of one level: concat [shallow', current', deep'] in that
/// order over the branches that exist, then the fusion CBR back to C channels.
/// Output shape equals f_cur's shape.
Tensor me_forward(const std::optional<Tensor>& f_shallow, const Tensor& f_cur,
                  const std::optional<Tensor>& f_deep, const MeBlockParams& p,
                  BnMode mode = BnMode::Eval);

}  // namespace amam

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "amam/ops.hpp"
#include "amam/tensor.hpp"

namespace amam {

enum class FusionMode { Adaptive, Average, Add, Concat };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& name);

/// Projections of one attention head over per-head width d = C/h. Q and K use
/// the reduced width d_qk; V keeps d.
struct AaHeadParams {
  Tensor w_q;  // (1,1,d,d_qk)
  Tensor w_k;  // (1,1,d,d_qk)
  Tensor w_v;  // (1,1,d,d)
};

/// Adaptive attention block over C channels split into h heads. Each cascade
/// boundary i carries one logit; alpha_i = sigmoid(logit_i), beta_i = 1 -
/// alpha_i, so alpha + beta = 1 by construction. Concat mode instead carries a
/// learned (2d x d) back-projection per boundary.
struct AaBlockParams {
  int channels = 0;
  int heads = 1;
  int d_qk = 1;
  FusionMode fusion = FusionMode::Adaptive;
  std::vector<AaHeadParams> head;      // h entries
  std::vector<Tensor> alpha_logits;    // h-1 scalars (1,1,1,1)
  std::vector<Tensor> concat_fuse;     // h-1 matrices (1,1,2d,d), Concat mode only
  Tensor w_p;                          // (1,1,C,C) output projection, bias-free

  /// d_qk defaults to max(1, d/2).
  static AaBlockParams init(int channels, int heads, FusionMode fusion, std::mt19937_64& rng,
                            std::optional<int> d_qk = std::nullopt);

  std::vector<Tensor> parameters() const;
  int head_width() const { return channels / heads; }
};

/// Self-attention of one head: tokens are the H*W spatial positions, features
/// the d channels; batch elements are processed independently.
Tensor head_attention(const Tensor& ff_in, const AaHeadParams& head, int d_qk);

/// One cascade boundary: combine the previous head's output with the next
/// input split. logit is required in Adaptive mode, fuse_weight in Concat mode.
Tensor cascade_fuse(const Tensor& tilde_prev, const Tensor& ff_next, FusionMode mode,
                    const Tensor* logit, const Tensor* fuse_weight);

Tensor aa_forward(const Tensor& ff, const AaBlockParams& p);

/// aa_forward plus the per-head attention outputs, for cascade diagnostics.
struct AaTrace {
  Tensor output;
  std::vector<Tensor> head_outputs;
};
AaTrace aa_forward_traced(const Tensor& ff, const AaBlockParams& p);

}  // namespace amam

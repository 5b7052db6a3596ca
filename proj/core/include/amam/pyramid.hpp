#pragma once

#include <cstdint>
#include <vector>

#include "amam/aa_block.hpp"
#include "amam/me_block.hpp"

namespace amam {

/// Configuration of a full module stack: one ME+AA pair per pyramid level.
/// Channel counts must double level to level and every count must be divisible
/// by the head count. enabled_me / enabled_aa are the ablation switches.
struct AmamConfig {
  std::vector<int> levels{32, 64, 128};
  int heads = 4;
  FusionMode fusion_mode = FusionMode::Adaptive;
  bool enabled_me = true;
  bool enabled_aa = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ordered feature maps, shallowest (largest spatial extent) first. Consecutive
/// maps double channels and halve each spatial dimension.
struct FeaturePyramid {
  std::vector<Tensor> maps;
};

/// Throws ShapeError naming the offending level and dimension.
void validate_pyramid(const FeaturePyramid& pyr, const AmamConfig& cfg);

struct AmamParams {
  std::vector<MeBlockParams> me;  // per level; boundary levels omit the missing branch
  std::vector<AaBlockParams> aa;

  static AmamParams init(const AmamConfig& cfg);
  std::vector<Tensor> parameters(const AmamConfig& cfg) const;
};

/// Per level i: AA(ME(pyr[i-1], pyr[i], pyr[i+1])), with missing neighbors
/// dropped at the boundary levels. Output shapes equal input shapes, which is
/// the insertion contract that lets the stack sit between a backbone and an
/// FPN. Disabled stages pass features through untouched.
FeaturePyramid amam_forward(const FeaturePyramid& pyr, const AmamConfig& cfg,
                            const AmamParams& params, BnMode mode = BnMode::Eval);

// ---- toy stand-ins for the surrounding detector -----------------------------

/// Strided CBS stages from a single-channel image, one per pyramid level:
/// stage i halves the spatial extent and outputs channels[i], so the default
/// levels give 32 -> 64 -> 128 channels at strides 2, 4, 8. Image sides must
/// be divisible by 2^stages.
struct ToyBackboneParams {
  std::vector<ConvBnAct> stages;
  static ToyBackboneParams init(std::mt19937_64& rng);  // default 32/64/128
  static ToyBackboneParams init(const std::vector<int>& channels, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};
FeaturePyramid toy_backbone(const Tensor& image, const ToyBackboneParams& p,
                            BnMode mode = BnMode::Eval);

/// Per level, a 1x1 conv to 5 channels: objectness logit + (cx, cy, w, h).
struct ToyHeadParams {
  std::vector<Tensor> kernels;  // (5, C_l, 1, 1)
  std::vector<Tensor> biases;   // (1, 5, 1, 1)
  static ToyHeadParams init(const std::vector<int>& level_channels, std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};
std::vector<Tensor> toy_head(const FeaturePyramid& pyr, const ToyHeadParams& p);

}  // namespace amam

#include "amam/pyramid.hpp"

namespace amam {

void AmamConfig::validate() const {
  if (levels.empty()) throw ConfigError("config: levels must not be empty");
  if (heads < 1) throw ConfigError("config: heads must be >= 1");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1) throw ConfigError("config: level " + std::to_string(i) + " has channels < 1");
    if (levels[i] % heads != 0) {
      throw ConfigError("config: head count " + std::to_string(heads) +
                        " does not divide level " + std::to_string(i) + " channels " +
                        std::to_string(levels[i]));
    }
    if (i > 0 && levels[i] != 2 * levels[i - 1]) {
      throw ConfigError("config: level " + std::to_string(i) + " channels " +
                        std::to_string(levels[i]) + " must double the previous level's " +
                        std::to_string(levels[i - 1]));
    }
  }
}

void validate_pyramid(const FeaturePyramid& pyr, const AmamConfig& cfg) {
  if (pyr.maps.size() != cfg.levels.size()) {
    throw ShapeError("pyramid: " + std::to_string(pyr.maps.size()) + " levels, config declares " +
                     std::to_string(cfg.levels.size()));
  }
  for (std::size_t i = 0; i < pyr.maps.size(); ++i) {
    const Shape s = pyr.maps[i].shape();
    if (s.c != cfg.levels[i]) {
      throw ShapeError("pyramid level " + std::to_string(i) + ": channel count " +
                       std::to_string(s.c) + " does not match configured " +
                       std::to_string(cfg.levels[i]));
    }
    if (i > 0) {
      const Shape prev = pyr.maps[i - 1].shape();
      if (s.n != prev.n) {
        throw ShapeError("pyramid level " + std::to_string(i) + ": batch " + std::to_string(s.n) +
                         " differs from level " + std::to_string(i - 1));
      }
      if (2 * s.h != prev.h) {
        throw ShapeError("pyramid level " + std::to_string(i) + ": height " + std::to_string(s.h) +
                         " must be half of the previous level's " + std::to_string(prev.h));
      }
      if (2 * s.w != prev.w) {
        throw ShapeError("pyramid level " + std::to_string(i) + ": width " + std::to_string(s.w) +
                         " must be half of the previous level's " + std::to_string(prev.w));
      }
    }
  }
}

AmamParams AmamParams::init(const AmamConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  AmamParams params;
  const std::size_t count = cfg.levels.size();
  for (std::size_t i = 0; i < count; ++i) {
    const bool has_shallow = i > 0;
    const bool has_deep = i + 1 < count;
    params.me.push_back(MeBlockParams::init(cfg.levels[i], has_shallow, has_deep, rng));
  }
  for (std::size_t i = 0; i < count; ++i) {
    params.aa.push_back(AaBlockParams::init(cfg.levels[i], cfg.heads, cfg.fusion_mode, rng));
  }
  return params;
}

std::vector<Tensor> AmamParams::parameters(const AmamConfig& cfg) const {
  std::vector<Tensor> out;
  if (cfg.enabled_me) {
    for (const MeBlockParams& block : me) {
      auto more = block.parameters();
      out.insert(out.end(), more.begin(), more.end());
    }
  }
  if (cfg.enabled_aa) {
    for (const AaBlockParams& block : aa) {
      auto more = block.parameters();
      out.insert(out.end(), more.begin(), more.end());
    }
  }
  return out;
}

FeaturePyramid amam_forward(const FeaturePyramid& pyr, const AmamConfig& cfg,
                            const AmamParams& params, BnMode mode) {
  validate_pyramid(pyr, cfg);
  if (params.me.size() != cfg.levels.size() || params.aa.size() != cfg.levels.size()) {
    throw ConfigError("amam_forward: parameter stack does not match the configured level count");
  }
  FeaturePyramid out;
  const std::size_t count = pyr.maps.size();
  for (std::size_t i = 0; i < count; ++i) {
    Tensor fused = pyr.maps[i];
    if (cfg.enabled_me) {
      std::optional<Tensor> shallow;
      std::optional<Tensor> deep;
      if (i > 0) shallow = pyr.maps[i - 1];
      if (i + 1 < count) deep = pyr.maps[i + 1];
      fused = me_forward(shallow, pyr.maps[i], deep, params.me[i], mode);
    }
    if (cfg.enabled_aa) {
      fused = aa_forward(fused, params.aa[i]);
    }
    out.maps.push_back(fused);
  }
  return out;
}

ToyBackboneParams ToyBackboneParams::init(std::mt19937_64& rng) {
  return init({32, 64, 128}, rng);
}

ToyBackboneParams ToyBackboneParams::init(const std::vector<int>& channels,
                                          std::mt19937_64& rng) {
  if (channels.empty()) throw ConfigError("toy_backbone: need at least one stage");
  ToyBackboneParams p;
  int c_in = 1;
  for (int c_out : channels) {
    p.stages.push_back(ConvBnAct::init(c_in, c_out, 3, 2, 1, Activation::SiLU, rng));
    c_in = c_out;
  }
  return p;
}

std::vector<Tensor> ToyBackboneParams::parameters() const {
  std::vector<Tensor> out;
  for (const ConvBnAct& stage : stages) {
    auto more = stage.parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

FeaturePyramid toy_backbone(const Tensor& image, const ToyBackboneParams& p, BnMode mode) {
  const Shape s = image.shape();
  if (s.c != 1) {
    throw ShapeError("toy_backbone: expected a single-channel image, got " +
                     std::to_string(s.c) + " channels");
  }
  const int factor = 1 << p.stages.size();
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("toy_backbone: image sides must be divisible by " +
                     std::to_string(factor) + ", got " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
  }
  FeaturePyramid pyr;
  Tensor x = image;
  for (const ConvBnAct& stage : p.stages) {
    x = stage.forward(x, mode);
    pyr.maps.push_back(x);
  }
  return pyr;
}

ToyHeadParams ToyHeadParams::init(const std::vector<int>& level_channels, std::mt19937_64& rng) {
  ToyHeadParams p;
  for (int c : level_channels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    p.kernels.push_back(Tensor::uniform(Shape{5, c, 1, 1}, -bound, bound, rng, true));
    p.biases.push_back(Tensor::zeros(Shape{1, 5, 1, 1}, true));
  }
  return p;
}

std::vector<Tensor> ToyHeadParams::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    out.push_back(kernels[i]);
    out.push_back(biases[i]);
  }
  return out;
}

std::vector<Tensor> toy_head(const FeaturePyramid& pyr, const ToyHeadParams& p) {
  if (pyr.maps.size() != p.kernels.size()) {
    throw ShapeError("toy_head: pyramid has " + std::to_string(pyr.maps.size()) +
                     " levels, head has " + std::to_string(p.kernels.size()));
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < pyr.maps.size(); ++i) {
    out.push_back(conv2d(pyr.maps[i], p.kernels[i], p.biases[i], 1, 0));
  }
  return out;
}

}  // namespace amam

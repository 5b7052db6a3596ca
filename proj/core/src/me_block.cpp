#include "amam/me_block.hpp"

namespace amam {

MeBlockParams MeBlockParams::init(int channels, bool has_shallow, bool has_deep,
                                  std::mt19937_64& rng, int branch_ksize, int fuse_ksize) {
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("MeBlockParams::init: channel count must be even and >= 2, got " +
                      std::to_string(channels));
  }
  MeBlockParams p;
  p.channels = channels;
  const int branch_pad = branch_ksize / 2;
  p.cbr_cur = ConvBnAct::init(channels, channels, branch_ksize, 1, branch_pad,
                              Activation::ReLU, rng);
  int present = 1;
  if (has_shallow) {
    p.cbr_shallow = ConvBnAct::init(channels / 2, channels, branch_ksize, 1, branch_pad,
                                    Activation::ReLU, rng);
    ++present;
  }
  if (has_deep) {
    p.cbr_deep = ConvBnAct::init(2 * channels, channels, branch_ksize, 1, branch_pad,
                                 Activation::ReLU, rng);
    ++present;
  }
  p.cbr_fuse = ConvBnAct::init(present * channels, channels, fuse_ksize, 1, fuse_ksize / 2,
                               Activation::ReLU, rng);
  return p;
}

std::vector<Tensor> MeBlockParams::parameters() const {
  std::vector<Tensor> out = cbr_cur.parameters();
  if (cbr_shallow) {
    auto more = cbr_shallow->parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  if (cbr_deep) {
    auto more = cbr_deep->parameters();
    out.insert(out.end(), more.begin(), more.end());
  }
  auto fuse = cbr_fuse.parameters();
  out.insert(out.end(), fuse.begin(), fuse.end());
  return out;
}

Tensor unify_current(const Tensor& f_cur, const MeBlockParams& p, BnMode mode) {
  if (f_cur.shape().c != p.channels) {
    throw ShapeError("unify_current: feature has " + std::to_string(f_cur.shape().c) +
                     " channels, block expects " + std::to_string(p.channels));
  }
  return p.cbr_cur.forward(f_cur, mode);
}

Tensor unify_shallow(const Tensor& f_shallow, const MeBlockParams& p, BnMode mode) {
  if (!p.cbr_shallow) {
    throw ConfigError("unify_shallow: block was built without a shallow branch");
  }
  if (f_shallow.shape().c != p.channels / 2) {
    throw ShapeError("unify_shallow: feature has " + std::to_string(f_shallow.shape().c) +
                     " channels, expected C/2 = " + std::to_string(p.channels / 2));
  }
  return downsample_avg2x(p.cbr_shallow->forward(f_shallow, mode));
}

Tensor unify_deep(const Tensor& f_deep, const MeBlockParams& p, BnMode mode) {
  if (!p.cbr_deep) {
    throw ConfigError("unify_deep: block was built without a deep branch");
  }
  if (f_deep.shape().c != 2 * p.channels) {
    throw ShapeError("unify_deep: feature has " + std::to_string(f_deep.shape().c) +
                     " channels, expected 2C = " + std::to_string(2 * p.channels));
  }
  return upsample_nearest2x(p.cbr_deep->forward(f_deep, mode));
}

Tensor me_forward(const std::optional<Tensor>& f_shallow, const Tensor& f_cur,
                  const std::optional<Tensor>& f_deep, const MeBlockParams& p,
                  BnMode mode) {
  const Shape cur = f_cur.shape();
  if (f_shallow) {
    const Shape s = f_shallow->shape();
    if (s.n != cur.n || s.h != 2 * cur.h || s.w != 2 * cur.w) {
      throw ShapeError("me_forward: shallow feature " + to_string(s) +
                       " must be (N, C/2, 2H, 2W) for current " + to_string(cur));
    }
    if (!p.cbr_shallow) {
      throw ConfigError("me_forward: shallow feature given, but block has no shallow branch");
    }
  }
  if (f_deep) {
    const Shape s = f_deep->shape();
    if (s.n != cur.n || 2 * s.h != cur.h || 2 * s.w != cur.w) {
      throw ShapeError("me_forward: deep feature " + to_string(s) +
                       " must be (N, 2C, H/2, W/2) for current " + to_string(cur));
    }
    if (!p.cbr_deep) {
      throw ConfigError("me_forward: deep feature given, but block has no deep branch");
    }
  }

  // Branch order is fixed: [shallow', current', deep'].
  std::vector<Tensor> branches;
  if (f_shallow) branches.push_back(unify_shallow(*f_shallow, p, mode));
  branches.push_back(unify_current(f_cur, p, mode));
  if (f_deep) branches.push_back(unify_deep(*f_deep, p, mode));

  Tensor stacked = concat_channels(branches);
  if (stacked.shape().c != p.fuse_in_channels()) {
    throw ShapeError("me_forward: " + std::to_string(stacked.shape().c) +
                     " concatenated channels, fusion layer expects " +
                     std::to_string(p.fuse_in_channels()));
  }
  return p.cbr_fuse.forward(stacked, mode);
}

}  // namespace amam

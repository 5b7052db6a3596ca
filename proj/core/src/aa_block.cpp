#include "amam/aa_block.hpp"

#include <cmath>

namespace amam {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Adaptive: return "adaptive";
    case FusionMode::Average: return "average";
    case FusionMode::Add: return "add";
    case FusionMode::Concat: return "concat";
  }
  throw ConfigError("unknown fusion mode");
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "adaptive") return FusionMode::Adaptive;
  if (name == "average") return FusionMode::Average;
  if (name == "add") return FusionMode::Add;
  if (name == "concat") return FusionMode::Concat;
  throw ConfigError("unknown fusion mode '" + name +
                    "' (expected adaptive, average, add, or concat)");
}

AaBlockParams AaBlockParams::init(int channels, int heads, FusionMode fusion,
                                  std::mt19937_64& rng, std::optional<int> d_qk_opt) {
  if (heads < 1) throw ConfigError("AaBlockParams::init: head count must be >= 1");
  if (channels < 1 || channels % heads != 0) {
    throw ShapeError("AaBlockParams::init: head count " + std::to_string(heads) +
                     " does not divide channel count " + std::to_string(channels));
  }
  AaBlockParams p;
  p.channels = channels;
  p.heads = heads;
  p.fusion = fusion;
  const int d = channels / heads;
  p.d_qk = d_qk_opt.value_or(std::max(1, d / 2));
  if (p.d_qk < 1) throw ConfigError("AaBlockParams::init: d_qk must be >= 1");

  const double bound_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < heads; ++i) {
    AaHeadParams h;
    h.w_q = Tensor::uniform(Shape{1, 1, d, p.d_qk}, -bound_d, bound_d, rng, true);
    h.w_k = Tensor::uniform(Shape{1, 1, d, p.d_qk}, -bound_d, bound_d, rng, true);
    h.w_v = Tensor::uniform(Shape{1, 1, d, d}, -bound_d, bound_d, rng, true);
    p.head.push_back(std::move(h));
  }
  for (int i = 0; i + 1 < heads; ++i) {
    p.alpha_logits.push_back(Tensor::scalar(0.0, true));
  }
  if (fusion == FusionMode::Concat) {
    const double bound_2d = 1.0 / std::sqrt(2.0 * d);
    for (int i = 0; i + 1 < heads; ++i) {
      p.concat_fuse.push_back(Tensor::uniform(Shape{1, 1, 2 * d, d}, -bound_2d, bound_2d, rng, true));
    }
  }
  const double bound_c = 1.0 / std::sqrt(static_cast<double>(channels));
  p.w_p = Tensor::uniform(Shape{1, 1, channels, channels}, -bound_c, bound_c, rng, true);
  return p;
}

std::vector<Tensor> AaBlockParams::parameters() const {
  std::vector<Tensor> out;
  for (const AaHeadParams& h : head) {
    out.push_back(h.w_q);
    out.push_back(h.w_k);
    out.push_back(h.w_v);
  }
  if (fusion == FusionMode::Adaptive) {
    out.insert(out.end(), alpha_logits.begin(), alpha_logits.end());
  }
  if (fusion == FusionMode::Concat) {
    out.insert(out.end(), concat_fuse.begin(), concat_fuse.end());
  }
  out.push_back(w_p);
  return out;
}

Tensor head_attention(const Tensor& ff_in, const AaHeadParams& head, int d_qk) {
  const Shape s = ff_in.shape();
  const int d = head.w_q.shape().h;
  if (s.c != d) {
    throw ShapeError("head_attention: input has " + std::to_string(s.c) +
                     " channels, head projections expect " + std::to_string(d));
  }
  if (head.w_q.shape().w != d_qk || head.w_k.shape().w != d_qk) {
    throw ShapeError("head_attention: projection width does not match d_qk = " +
                     std::to_string(d_qk));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_qk));
  std::vector<Tensor> per_batch;
  per_batch.reserve(s.n);
  for (int n = 0; n < s.n; ++n) {
    Tensor x = s.n == 1 ? ff_in : slice_batch(ff_in, n);
    Tensor tokens = to_tokens(x);  // (1,1,HW,d)
    Tensor q = matmul(tokens, head.w_q);
    Tensor k = matmul(tokens, head.w_k);
    Tensor v = matmul(tokens, head.w_v);
    Tensor ctx = scaled_dot_attention(q, k, v, scale);
    per_batch.push_back(from_tokens(ctx, s.h, s.w));
  }
  return per_batch.size() == 1 ? per_batch.front() : concat_batch(per_batch);
}

Tensor cascade_fuse(const Tensor& tilde_prev, const Tensor& ff_next, FusionMode mode,
                    const Tensor* logit, const Tensor* fuse_weight) {
  if (!(tilde_prev.shape() == ff_next.shape())) {
    throw ShapeError("cascade_fuse: input shapes " + to_string(tilde_prev.shape()) + " and " +
                     to_string(ff_next.shape()) + " differ");
  }
  switch (mode) {
    case FusionMode::Adaptive: {
      if (logit == nullptr || !logit->valid()) {
        throw ConfigError("cascade_fuse: Adaptive mode requires a boundary logit");
      }
      Tensor alpha = sigmoid(*logit);
      Tensor beta = affine(alpha, -1.0, 1.0);  // beta = 1 - alpha, exactly complementary
      return add(scale_by(tilde_prev, alpha), scale_by(ff_next, beta));
    }
    case FusionMode::Average:
      return scale(add(tilde_prev, ff_next), 0.5);
    case FusionMode::Add:
      return add(tilde_prev, ff_next);
    case FusionMode::Concat: {
      if (fuse_weight == nullptr || !fuse_weight->valid()) {
        throw ConfigError("cascade_fuse: Concat mode requires a back-projection weight");
      }
      Tensor stacked = concat_channels({tilde_prev, ff_next});
      return project_channels(stacked, *fuse_weight);
    }
  }
  throw ConfigError("cascade_fuse: unknown fusion mode");
}

namespace {

AaTrace run_aa(const Tensor& ff, const AaBlockParams& p) {
  const Shape s = ff.shape();
  if (p.heads < 1 || s.c != p.channels || s.c % p.heads != 0) {
    throw ShapeError("aa_forward: channel count " + std::to_string(s.c) +
                     " is not divisible into " + std::to_string(p.heads) + " heads of block C=" +
                     std::to_string(p.channels));
  }
  std::vector<Tensor> splits = split_channels(ff, p.heads);

  AaTrace trace;
  Tensor current = splits[0];  // FF'_1 = FF_1
  for (int i = 0; i < p.heads; ++i) {
    Tensor head_out = head_attention(current, p.head[i], p.d_qk);
    trace.head_outputs.push_back(head_out);
    if (i + 1 < p.heads) {
      const Tensor* logit =
          p.fusion == FusionMode::Adaptive ? &p.alpha_logits[i] : nullptr;
      const Tensor* fuse_w =
          p.fusion == FusionMode::Concat ? &p.concat_fuse[i] : nullptr;
      current = cascade_fuse(head_out, splits[i + 1], p.fusion, logit, fuse_w);
    }
  }
  trace.output = project_channels(concat_channels(trace.head_outputs), p.w_p);
  return trace;
}

}  // namespace

Tensor aa_forward(const Tensor& ff, const AaBlockParams& p) { return run_aa(ff, p).output; }

AaTrace aa_forward_traced(const Tensor& ff, const AaBlockParams& p) { return run_aa(ff, p); }

}  // namespace amam

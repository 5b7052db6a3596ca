#include "amam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "amam/gradcheck.hpp"

namespace amam {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!detail::grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_op(Shape shape, std::vector<double> data, bool rg,
               std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(data);
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(n);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) +
                     " does not match " + to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& m) {
  if (m.shape().n != 1 || m.shape().c != 1) {
    throw ShapeError(std::string(op) + ": expected a matrix tensor (1,1,rows,cols), got " +
                     to_string(m.shape()));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// FNV-1a over a boolean predicate, used to detect non-smooth crossings between
// the two finite-difference evaluations of a gradient check.
template <typename Pred>
std::uint64_t mask_signature(const double* values, std::size_t count, Pred pred) {
  std::uint64_t sig = 1469598103934665603ull;
  for (std::size_t i = 0; i < count; ++i) {
    sig = (sig ^ (pred(values[i]) ? 0x9Eull : 0x31ull)) * 1099511628211ull;
  }
  return sig;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.data(), a.data() + a.numel());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_op(a.shape(), std::move(out), wants_grad({&a, &b}), {a.node(), b.node()},
                 [](Node& self) {
                   for (int which = 0; which < 2; ++which) {
                     Node* p = self.parents[which].get();
                     if (!p->requires_grad) continue;
                     p->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.data(), a.data() + a.numel());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_op(a.shape(), std::move(out), wants_grad({&a, &b}), {a.node(), b.node()},
                 [](Node& self) {
                   Node* pa = self.parents[0].get();
                   Node* pb2 = self.parents[1].get();
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
                   }
                   if (pb2->requires_grad) {
                     pb2->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) pb2->grad[i] -= self.grad[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_op(a.shape(), std::move(out), wants_grad({&a, &b}), {a.node(), b.node()},
                 [](Node& self) {
                   Node* pa2 = self.parents[0].get();
                   Node* pb2 = self.parents[1].get();
                   if (pa2->requires_grad) {
                     pa2->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa2->grad[i] += self.grad[i] * pb2->data[i];
                   }
                   if (pb2->requires_grad) {
                     pb2->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pb2->grad[i] += self.grad[i] * pa2->data[i];
                   }
                 });
}

Tensor affine(const Tensor& x, double factor, double offset) {
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * px[i] + offset;
  return make_op(x.shape(), std::move(out), wants_grad({&x}), {x.node()},
                 [factor](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += factor * self.grad[i];
                 });
}

Tensor scale(const Tensor& x, double factor) { return affine(x, factor, 0.0); }

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (!(s.shape() == Shape{1, 1, 1, 1})) {
    throw ShapeError("scale_by: scale must have shape (1,1,1,1), got " + to_string(s.shape()));
  }
  const double sv = s.data()[0];
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * px[i];
  return make_op(x.shape(), std::move(out), wants_grad({&x, &s}), {x.node(), s.node()},
                 [](Node& self) {
                   Node* px2 = self.parents[0].get();
                   Node* ps = self.parents[1].get();
                   const double sv2 = ps->data[0];
                   if (px2->requires_grad) {
                     px2->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       px2->grad[i] += sv2 * self.grad[i];
                   }
                   if (ps->requires_grad) {
                     ps->ensure_grad();
                     double acc = 0.0;
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       acc += self.grad[i] * px2->data[i];
                     ps->grad[0] += acc;
                   }
                 });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(px[i]);
  return make_op(x.shape(), std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double y = self.data[i];
                     p->grad[i] += self.grad[i] * y * (1.0 - y);
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (detail::kink_recording()) {
    detail::record_kink_signature(
        mask_signature(px, x.numel(), [](double v) { return v > 0.0; }));
  }
  return make_op(x.shape(), std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     if (p->data[i] > 0.0) p->grad[i] += self.grad[i];
                   }
                 });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * sigmoid_scalar(px[i]);
  return make_op(x.shape(), std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double s = sigmoid_scalar(p->data[i]);
                     p->grad[i] += self.grad[i] * s * (1.0 + p->data[i] * (1.0 - s));
                   }
                 });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::ReLU: return relu(x);
    case Activation::SiLU: return silu(x);
    case Activation::None: return x;
  }
  throw ConfigError("activation: unknown kind");
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
  return make_op(Shape{1, 1, 1, 1}, {acc}, wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const double g = self.grad[0];
                   for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
                 });
}

// ---- structural ------------------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int total_c = 0;
  for (const Tensor& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: part shape " + to_string(s) +
                       " does not match batch/spatial dims of " + to_string(first));
    }
    total_c += s.c;
  }
  const Shape out_shape{first.n, total_c, first.h, first.w};
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  std::vector<double> out(out_shape.numel());
  bool rg = false;
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const Tensor& p : parts) {
    rg = rg || p.requires_grad();
    parents.push_back(p.node());
  }
  rg = rg && detail::grad_enabled();
  for (int n = 0; n < first.n; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * total_c * plane;
    for (const Tensor& p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p.shape().c) * plane;
      const double* src = p.data() + static_cast<std::size_t>(n) * chunk;
      std::copy(src, src + chunk, out.begin() + off);
      off += chunk;
    }
  }
  return make_op(out_shape, std::move(out), rg, std::move(parents),
                 [plane, total_c](Node& self) {
                   const int n_batches = self.shape.n;
                   for (int n = 0; n < n_batches; ++n) {
                     std::size_t off = static_cast<std::size_t>(n) * total_c * plane;
                     for (auto& parent : self.parents) {
                       const std::size_t chunk =
                           static_cast<std::size_t>(parent->shape.c) * plane;
                       if (parent->requires_grad) {
                         parent->ensure_grad();
                         double* dst = parent->grad.data() + static_cast<std::size_t>(n) * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[off + i];
                       }
                       off += chunk;
                     }
                   }
                 });
}

std::vector<Tensor> split_channels(const Tensor& x, int groups) {
  const Shape s = x.shape();
  if (groups < 1 || s.c % groups != 0) {
    throw ShapeError("split_channels: group count " + std::to_string(groups) +
                     " does not divide channel count " + std::to_string(s.c));
  }
  const int part_c = s.c / groups;
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t chunk = static_cast<std::size_t>(part_c) * plane;
  const bool rg = wants_grad({&x});
  std::vector<Tensor> outs;
  outs.reserve(groups);
  for (int g = 0; g < groups; ++g) {
    std::vector<double> data(chunk * s.n);
    for (int n = 0; n < s.n; ++n) {
      const double* src =
          x.data() + (static_cast<std::size_t>(n) * s.c + static_cast<std::size_t>(g) * part_c) * plane;
      std::copy(src, src + chunk, data.begin() + static_cast<std::size_t>(n) * chunk);
    }
    const int total_c = s.c;
    outs.push_back(make_op(Shape{s.n, part_c, s.h, s.w}, std::move(data), rg, {x.node()},
                           [g, part_c, plane, total_c, chunk](Node& self) {
                             Node* p = self.parents[0].get();
                             p->ensure_grad();
                             for (int n = 0; n < self.shape.n; ++n) {
                               double* dst = p->grad.data() +
                                             (static_cast<std::size_t>(n) * total_c +
                                              static_cast<std::size_t>(g) * part_c) *
                                                 plane;
                               const double* src =
                                   self.grad.data() + static_cast<std::size_t>(n) * chunk;
                               for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                             }
                           }));
  }
  return outs;
}

Tensor slice_batch(const Tensor& x, int index) {
  const Shape s = x.shape();
  if (index < 0 || index >= s.n) {
    throw ShapeError("slice_batch: index " + std::to_string(index) + " out of range for batch " +
                     std::to_string(s.n));
  }
  const std::size_t chunk = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<double> data(x.data() + index * chunk, x.data() + (index + 1) * chunk);
  return make_op(Shape{1, s.c, s.h, s.w}, std::move(data), wants_grad({&x}), {x.node()},
                 [index, chunk](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   double* dst = p->grad.data() + static_cast<std::size_t>(index) * chunk;
                   for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[i];
                 });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  const Shape first = parts.front().shape();
  int total_n = 0;
  bool rg = false;
  std::vector<NodePtr> parents;
  for (const Tensor& p : parts) {
    const Shape s = p.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_batch: part shape " + to_string(s) +
                       " does not match channel/spatial dims of " + to_string(first));
    }
    total_n += s.n;
    rg = rg || p.requires_grad();
    parents.push_back(p.node());
  }
  rg = rg && detail::grad_enabled();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_n) * first.c * first.h * first.w);
  for (const Tensor& p : parts) out.insert(out.end(), p.data(), p.data() + p.numel());
  return make_op(Shape{total_n, first.c, first.h, first.w}, std::move(out), rg,
                 std::move(parents), [](Node& self) {
                   std::size_t off = 0;
                   for (auto& parent : self.parents) {
                     const std::size_t chunk = parent->shape.numel();
                     if (parent->requires_grad) {
                       parent->ensure_grad();
                       for (std::size_t i = 0; i < chunk; ++i)
                         parent->grad[i] += self.grad[off + i];
                     }
                     off += chunk;
                   }
                 });
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Shape s = x.shape();
  const Shape out_shape{s.n, s.c, 2 * s.h, 2 * s.w};
  std::vector<double> out(out_shape.numel());
  const double* px = x.data();
  std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = px + pl * s.h * s.w;
    double* dst = out.data() + pl * 4 * s.h * s.w;
    for (int y = 0; y < s.h; ++y) {
      for (int x2 = 0; x2 < s.w; ++x2) {
        const double v = src[y * s.w + x2];
        const std::size_t base = (2 * static_cast<std::size_t>(y)) * (2 * s.w) + 2 * x2;
        dst[base] = v;
        dst[base + 1] = v;
        dst[base + 2 * s.w] = v;
        dst[base + 2 * s.w + 1] = v;
      }
    }
  }
  return make_op(out_shape, std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const int sh = p->shape.h, sw = p->shape.w;
                   const std::size_t planes2 = static_cast<std::size_t>(p->shape.n) * p->shape.c;
                   for (std::size_t pl = 0; pl < planes2; ++pl) {
                     double* dst = p->grad.data() + pl * sh * sw;
                     const double* g = self.grad.data() + pl * 4 * sh * sw;
                     for (int y = 0; y < sh; ++y) {
                       for (int x2 = 0; x2 < sw; ++x2) {
                         const std::size_t base =
                             (2 * static_cast<std::size_t>(y)) * (2 * sw) + 2 * x2;
                         dst[y * sw + x2] +=
                             g[base] + g[base + 1] + g[base + 2 * sw] + g[base + 2 * sw + 1];
                       }
                     }
                   }
                 });
}

Tensor downsample_avg2x(const Tensor& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0) {
    throw ShapeError("downsample_avg2x: height " + std::to_string(s.h) + " is odd");
  }
  if (s.w % 2 != 0) {
    throw ShapeError("downsample_avg2x: width " + std::to_string(s.w) + " is odd");
  }
  const Shape out_shape{s.n, s.c, s.h / 2, s.w / 2};
  std::vector<double> out(out_shape.numel());
  const double* px = x.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = px + pl * s.h * s.w;
    double* dst = out.data() + pl * (s.h / 2) * (s.w / 2);
    for (int y = 0; y < s.h / 2; ++y) {
      for (int x2 = 0; x2 < s.w / 2; ++x2) {
        const std::size_t base = (2 * static_cast<std::size_t>(y)) * s.w + 2 * x2;
        dst[y * (s.w / 2) + x2] =
            0.25 * (src[base] + src[base + 1] + src[base + s.w] + src[base + s.w + 1]);
      }
    }
  }
  return make_op(out_shape, std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const int sh = p->shape.h, sw = p->shape.w;
                   const std::size_t planes2 = static_cast<std::size_t>(p->shape.n) * p->shape.c;
                   for (std::size_t pl = 0; pl < planes2; ++pl) {
                     double* dst = p->grad.data() + pl * sh * sw;
                     const double* g = self.grad.data() + pl * (sh / 2) * (sw / 2);
                     for (int y = 0; y < sh / 2; ++y) {
                       for (int x2 = 0; x2 < sw / 2; ++x2) {
                         const double gv = 0.25 * g[y * (sw / 2) + x2];
                         const std::size_t base = (2 * static_cast<std::size_t>(y)) * sw + 2 * x2;
                         dst[base] += gv;
                         dst[base + 1] += gv;
                         dst[base + sw] += gv;
                         dst[base + sw + 1] += gv;
                       }
                     }
                   }
                 });
}

Tensor to_tokens(const Tensor& x) {
  const Shape s = x.shape();
  if (s.n != 1) {
    throw ShapeError("to_tokens: expected batch 1, got " + std::to_string(s.n));
  }
  const int tokens = s.h * s.w;
  std::vector<double> out(static_cast<std::size_t>(tokens) * s.c);
  const double* px = x.data();
  for (int c = 0; c < s.c; ++c) {
    for (int p = 0; p < tokens; ++p) {
      out[static_cast<std::size_t>(p) * s.c + c] = px[static_cast<std::size_t>(c) * tokens + p];
    }
  }
  return make_op(Shape{1, 1, tokens, s.c}, std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const int channels = p->shape.c;
                   const int tokens2 = p->shape.h * p->shape.w;
                   for (int c = 0; c < channels; ++c) {
                     for (int t = 0; t < tokens2; ++t) {
                       p->grad[static_cast<std::size_t>(c) * tokens2 + t] +=
                           self.grad[static_cast<std::size_t>(t) * channels + c];
                     }
                   }
                 });
}

Tensor from_tokens(const Tensor& tokens, int h, int w) {
  const Shape s = tokens.shape();
  require_matrix("from_tokens", tokens);
  if (s.h != h * w) {
    throw ShapeError("from_tokens: token count " + std::to_string(s.h) +
                     " does not equal h*w = " + std::to_string(h * w));
  }
  const int channels = s.w;
  std::vector<double> out(static_cast<std::size_t>(channels) * h * w);
  const double* pt = tokens.data();
  for (int c = 0; c < channels; ++c) {
    for (int p = 0; p < h * w; ++p) {
      out[static_cast<std::size_t>(c) * h * w + p] = pt[static_cast<std::size_t>(p) * channels + c];
    }
  }
  return make_op(Shape{1, channels, h, w}, std::move(out), wants_grad({&tokens}), {tokens.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const int channels2 = self.shape.c;
                   const int count = self.shape.h * self.shape.w;
                   for (int c = 0; c < channels2; ++c) {
                     for (int t = 0; t < count; ++t) {
                       p->grad[static_cast<std::size_t>(t) * channels2 + c] +=
                           self.grad[static_cast<std::size_t>(c) * count + t];
                     }
                   }
                 });
}

// ---- matrices --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const int rows = a.shape().h, inner = a.shape().w, cols = b.shape().w;
  if (b.shape().h != inner) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(inner) + " and " +
                     std::to_string(b.shape().h) + " do not agree");
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < rows; ++i) {
    for (int k = 0; k < inner; ++k) {
      const double av = pa[static_cast<std::size_t>(i) * inner + k];
      const double* brow = pb + static_cast<std::size_t>(k) * cols;
      double* orow = out.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  return make_op(Shape{1, 1, rows, cols}, std::move(out), wants_grad({&a, &b}),
                 {a.node(), b.node()}, [](Node& self) {
                   Node* pa2 = self.parents[0].get();
                   Node* pb2 = self.parents[1].get();
                   const int rows2 = pa2->shape.h, inner2 = pa2->shape.w, cols2 = pb2->shape.w;
                   if (pa2->requires_grad) {
                     pa2->ensure_grad();
                     for (int i = 0; i < rows2; ++i) {
                       for (int k = 0; k < inner2; ++k) {
                         double acc = 0.0;
                         const double* g = self.grad.data() + static_cast<std::size_t>(i) * cols2;
                         const double* bk = pb2->data.data() + static_cast<std::size_t>(k) * cols2;
                         for (int j = 0; j < cols2; ++j) acc += g[j] * bk[j];
                         pa2->grad[static_cast<std::size_t>(i) * inner2 + k] += acc;
                       }
                     }
                   }
                   if (pb2->requires_grad) {
                     pb2->ensure_grad();
                     for (int k = 0; k < inner2; ++k) {
                       for (int i = 0; i < rows2; ++i) {
                         const double av = pa2->data[static_cast<std::size_t>(i) * inner2 + k];
                         const double* g = self.grad.data() + static_cast<std::size_t>(i) * cols2;
                         double* bg = pb2->grad.data() + static_cast<std::size_t>(k) * cols2;
                         for (int j = 0; j < cols2; ++j) bg[j] += av * g[j];
                       }
                     }
                   }
                 });
}

namespace {

// Row softmax into dst, max-subtracted.
void softmax_rows(const double* src, double* dst, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* in = src + static_cast<std::size_t>(r) * cols;
    double* out = dst + static_cast<std::size_t>(r) * cols;
    double mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (int j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    const double inv = 1.0 / total;
    for (int j = 0; j < cols; ++j) out[j] *= inv;
  }
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
  require_matrix("softmax_lastdim", x);
  const int rows = x.shape().h, cols = x.shape().w;
  std::vector<double> out(x.numel());
  softmax_rows(x.data(), out.data(), rows, cols);
  return make_op(x.shape(), std::move(out), wants_grad({&x}), {x.node()},
                 [](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const int rows2 = self.shape.h, cols2 = self.shape.w;
                   for (int r = 0; r < rows2; ++r) {
                     const double* y = self.data.data() + static_cast<std::size_t>(r) * cols2;
                     const double* g = self.grad.data() + static_cast<std::size_t>(r) * cols2;
                     double dot = 0.0;
                     for (int j = 0; j < cols2; ++j) dot += y[j] * g[j];
                     double* dst = p->grad.data() + static_cast<std::size_t>(r) * cols2;
                     for (int j = 0; j < cols2; ++j) dst[j] += y[j] * (g[j] - dot);
                   }
                 });
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require_matrix("scaled_dot_attention", q);
  require_matrix("scaled_dot_attention", k);
  require_matrix("scaled_dot_attention", v);
  const int tokens = q.shape().h, d_qk = q.shape().w, d_v = v.shape().w;
  if (k.shape().h != tokens || v.shape().h != tokens) {
    throw ShapeError("scaled_dot_attention: token counts disagree: q " + to_string(q.shape()) +
                     ", k " + to_string(k.shape()) + ", v " + to_string(v.shape()));
  }
  if (k.shape().w != d_qk) {
    throw ShapeError("scaled_dot_attention: q/k feature dims " + std::to_string(d_qk) + " vs " +
                     std::to_string(k.shape().w));
  }

  // scores = scale * q k^T, then row softmax
  std::vector<double> attn(static_cast<std::size_t>(tokens) * tokens);
  {
    std::vector<double> scores(attn.size(), 0.0);
    const double* pq = q.data();
    const double* pk = k.data();
    for (int r = 0; r < tokens; ++r) {
      for (int t = 0; t < tokens; ++t) {
        double acc = 0.0;
        const double* qr = pq + static_cast<std::size_t>(r) * d_qk;
        const double* kt = pk + static_cast<std::size_t>(t) * d_qk;
        for (int d = 0; d < d_qk; ++d) acc += qr[d] * kt[d];
        scores[static_cast<std::size_t>(r) * tokens + t] = scale * acc;
      }
    }
    softmax_rows(scores.data(), attn.data(), tokens, tokens);
  }

  std::vector<double> out(static_cast<std::size_t>(tokens) * d_v, 0.0);
  const double* pv = v.data();
  for (int r = 0; r < tokens; ++r) {
    for (int t = 0; t < tokens; ++t) {
      const double a = attn[static_cast<std::size_t>(r) * tokens + t];
      const double* vt = pv + static_cast<std::size_t>(t) * d_v;
      double* orow = out.data() + static_cast<std::size_t>(r) * d_v;
      for (int j = 0; j < d_v; ++j) orow[j] += a * vt[j];
    }
  }

  const bool rg = wants_grad({&q, &k, &v});
  std::vector<double> attn_saved = rg ? attn : std::vector<double>{};
  return make_op(
      Shape{1, 1, tokens, d_v}, std::move(out), rg, {q.node(), k.node(), v.node()},
      [attn2 = std::move(attn_saved), scale](Node& self) {
        Node* pq = self.parents[0].get();
        Node* pk = self.parents[1].get();
        Node* pv2 = self.parents[2].get();
        const int tokens2 = pq->shape.h;
        const int d_qk2 = pq->shape.w;
        const int d_v2 = pv2->shape.w;
        if (pq->requires_grad) pq->ensure_grad();
        if (pk->requires_grad) pk->ensure_grad();
        if (pv2->requires_grad) pv2->ensure_grad();

        // dV = A^T g
        if (pv2->requires_grad) {
          for (int r = 0; r < tokens2; ++r) {
            const double* g = self.grad.data() + static_cast<std::size_t>(r) * d_v2;
            const double* arow = attn2.data() + static_cast<std::size_t>(r) * tokens2;
            for (int t = 0; t < tokens2; ++t) {
              double* vg = pv2->grad.data() + static_cast<std::size_t>(t) * d_v2;
              const double a = arow[t];
              for (int j = 0; j < d_v2; ++j) vg[j] += a * g[j];
            }
          }
        }

        const bool need_qk = pq->requires_grad || pk->requires_grad;
        if (!need_qk) return;
        std::vector<double> da_row(tokens2);
        std::vector<double> ds_row(tokens2);
        for (int r = 0; r < tokens2; ++r) {
          const double* g = self.grad.data() + static_cast<std::size_t>(r) * d_v2;
          const double* arow = attn2.data() + static_cast<std::size_t>(r) * tokens2;
          // dA[r][t] = g[r] . V[t]
          for (int t = 0; t < tokens2; ++t) {
            double acc = 0.0;
            const double* vt = pv2->data.data() + static_cast<std::size_t>(t) * d_v2;
            for (int j = 0; j < d_v2; ++j) acc += g[j] * vt[j];
            da_row[t] = acc;
          }
          // softmax backward within the row
          double dot = 0.0;
          for (int t = 0; t < tokens2; ++t) dot += da_row[t] * arow[t];
          for (int t = 0; t < tokens2; ++t) ds_row[t] = arow[t] * (da_row[t] - dot);
          // dQ[r] += scale * dS[r] K ; dK[t] += scale * dS[r][t] Q[r]
          const double* qr = pq->data.data() + static_cast<std::size_t>(r) * d_qk2;
          double* qg = pq->requires_grad
                           ? pq->grad.data() + static_cast<std::size_t>(r) * d_qk2
                           : nullptr;
          for (int t = 0; t < tokens2; ++t) {
            const double sv = scale * ds_row[t];
            if (sv == 0.0) continue;
            const double* kt = pk->data.data() + static_cast<std::size_t>(t) * d_qk2;
            if (qg) {
              for (int d = 0; d < d_qk2; ++d) qg[d] += sv * kt[d];
            }
            if (pk->requires_grad) {
              double* kg = pk->grad.data() + static_cast<std::size_t>(t) * d_qk2;
              for (int d = 0; d < d_qk2; ++d) kg[d] += sv * qr[d];
            }
          }
        }
      });
}

Tensor project_channels(const Tensor& x, const Tensor& weight) {
  require_matrix("project_channels", weight);
  const Shape s = x.shape();
  const int c_in = weight.shape().h, c_out = weight.shape().w;
  if (s.c != c_in) {
    throw ShapeError("project_channels: input channels " + std::to_string(s.c) +
                     " do not match weight rows " + std::to_string(c_in));
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<double> out(static_cast<std::size_t>(s.n) * c_out * plane, 0.0);
  const double* px = x.data();
  const double* pw = weight.data();
  for (int n = 0; n < s.n; ++n) {
    const double* xb = px + static_cast<std::size_t>(n) * c_in * plane;
    double* ob = out.data() + static_cast<std::size_t>(n) * c_out * plane;
    for (int i = 0; i < c_in; ++i) {
      const double* xi = xb + static_cast<std::size_t>(i) * plane;
      const double* wrow = pw + static_cast<std::size_t>(i) * c_out;
      for (int o = 0; o < c_out; ++o) {
        const double wv = wrow[o];
        if (wv == 0.0) continue;
        double* oo = ob + static_cast<std::size_t>(o) * plane;
        for (std::size_t p = 0; p < plane; ++p) oo[p] += wv * xi[p];
      }
    }
  }
  return make_op(Shape{s.n, c_out, s.h, s.w}, std::move(out), wants_grad({&x, &weight}),
                 {x.node(), weight.node()}, [plane](Node& self) {
                   Node* px2 = self.parents[0].get();
                   Node* pw2 = self.parents[1].get();
                   const int c_in2 = pw2->shape.h, c_out2 = pw2->shape.w;
                   const int batches = px2->shape.n;
                   if (px2->requires_grad) {
                     px2->ensure_grad();
                     for (int n = 0; n < batches; ++n) {
                       const double* gb = self.grad.data() + static_cast<std::size_t>(n) * c_out2 * plane;
                       double* xg = px2->grad.data() + static_cast<std::size_t>(n) * c_in2 * plane;
                       for (int i = 0; i < c_in2; ++i) {
                         const double* wrow = pw2->data.data() + static_cast<std::size_t>(i) * c_out2;
                         double* xi = xg + static_cast<std::size_t>(i) * plane;
                         for (int o = 0; o < c_out2; ++o) {
                           const double wv = wrow[o];
                           if (wv == 0.0) continue;
                           const double* go = gb + static_cast<std::size_t>(o) * plane;
                           for (std::size_t p = 0; p < plane; ++p) xi[p] += wv * go[p];
                         }
                       }
                     }
                   }
                   if (pw2->requires_grad) {
                     pw2->ensure_grad();
                     for (int n = 0; n < batches; ++n) {
                       const double* gb = self.grad.data() + static_cast<std::size_t>(n) * c_out2 * plane;
                       const double* xb = px2->data.data() + static_cast<std::size_t>(n) * c_in2 * plane;
                       for (int i = 0; i < c_in2; ++i) {
                         const double* xi = xb + static_cast<std::size_t>(i) * plane;
                         double* wg = pw2->grad.data() + static_cast<std::size_t>(i) * c_out2;
                         for (int o = 0; o < c_out2; ++o) {
                           const double* go = gb + static_cast<std::size_t>(o) * plane;
                           double acc = 0.0;
                           for (std::size_t p = 0; p < plane; ++p) acc += xi[p] * go[p];
                           wg[o] += acc;
                         }
                       }
                     }
                   }
                 });
}

// ---- conv / norm -----------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (xs.c != ks.c) {
    throw ShapeError("conv2d: input channels (" + std::to_string(xs.c) +
                     ") do not match kernel input channels (" + std::to_string(ks.c) + ")");
  }
  if (!(bias.shape() == Shape{1, ks.n, 1, 1})) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " must be (1," +
                     std::to_string(ks.n) + ",1,1)");
  }
  const int h_out = (xs.h + 2 * padding - ks.h) / stride + 1;
  const int w_out = (xs.w + 2 * padding - ks.w) / stride + 1;
  if (xs.h + 2 * padding < ks.h || xs.w + 2 * padding < ks.w || h_out < 1 || w_out < 1) {
    throw ShapeError("conv2d: degenerate output " + std::to_string(h_out) + "x" +
                     std::to_string(w_out) + " for input " + to_string(xs) + ", kernel " +
                     to_string(ks) + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(padding));
  }

  const Shape out_shape{xs.n, ks.n, h_out, w_out};
  std::vector<double> out(out_shape.numel());
  const double* px = x.data();
  const double* pk = kernel.data();
  const double* pbias = bias.data();

  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < ks.n; ++o) {
      double* oplane = out.data() +
                       (static_cast<std::size_t>(n) * ks.n + o) * h_out * w_out;
      std::fill(oplane, oplane + static_cast<std::size_t>(h_out) * w_out, pbias[o]);
      for (int i = 0; i < ks.c; ++i) {
        const double* xplane = px + (static_cast<std::size_t>(n) * xs.c + i) * xs.h * xs.w;
        const double* kplane = pk + (static_cast<std::size_t>(o) * ks.c + i) * ks.h * ks.w;
        for (int ky = 0; ky < ks.h; ++ky) {
          for (int kx = 0; kx < ks.w; ++kx) {
            const double wv = kplane[ky * ks.w + kx];
            if (wv == 0.0) continue;
            for (int y = 0; y < h_out; ++y) {
              const int iy = y * stride - padding + ky;
              if (iy < 0 || iy >= xs.h) continue;
              const double* xrow = xplane + static_cast<std::size_t>(iy) * xs.w;
              double* orow = oplane + static_cast<std::size_t>(y) * w_out;
              for (int x2 = 0; x2 < w_out; ++x2) {
                const int ix = x2 * stride - padding + kx;
                if (ix < 0 || ix >= xs.w) continue;
                orow[x2] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }

  return make_op(
      out_shape, std::move(out), wants_grad({&x, &kernel, &bias}),
      {x.node(), kernel.node(), bias.node()}, [stride, padding](Node& self) {
        Node* px2 = self.parents[0].get();
        Node* pk2 = self.parents[1].get();
        Node* pb2 = self.parents[2].get();
        const Shape xs2 = px2->shape;
        const Shape ks2 = pk2->shape;
        const int h_out2 = self.shape.h, w_out2 = self.shape.w;
        if (px2->requires_grad) px2->ensure_grad();
        if (pk2->requires_grad) pk2->ensure_grad();
        if (pb2->requires_grad) pb2->ensure_grad();

        for (int n = 0; n < xs2.n; ++n) {
          for (int o = 0; o < ks2.n; ++o) {
            const double* gplane = self.grad.data() +
                                   (static_cast<std::size_t>(n) * ks2.n + o) * h_out2 * w_out2;
            if (pb2->requires_grad) {
              double acc = 0.0;
              for (std::size_t i = 0; i < static_cast<std::size_t>(h_out2) * w_out2; ++i)
                acc += gplane[i];
              pb2->grad[o] += acc;
            }
            for (int i = 0; i < ks2.c; ++i) {
              const double* xplane =
                  px2->data.data() + (static_cast<std::size_t>(n) * xs2.c + i) * xs2.h * xs2.w;
              double* xgplane =
                  px2->requires_grad
                      ? px2->grad.data() + (static_cast<std::size_t>(n) * xs2.c + i) * xs2.h * xs2.w
                      : nullptr;
              const double* kplane =
                  pk2->data.data() + (static_cast<std::size_t>(o) * ks2.c + i) * ks2.h * ks2.w;
              double* kgplane =
                  pk2->requires_grad
                      ? pk2->grad.data() + (static_cast<std::size_t>(o) * ks2.c + i) * ks2.h * ks2.w
                      : nullptr;
              for (int ky = 0; ky < ks2.h; ++ky) {
                for (int kx = 0; kx < ks2.w; ++kx) {
                  const double wv = kplane[ky * ks2.w + kx];
                  double kacc = 0.0;
                  for (int y = 0; y < h_out2; ++y) {
                    const int iy = y * stride - padding + ky;
                    if (iy < 0 || iy >= xs2.h) continue;
                    const double* xrow = xplane + static_cast<std::size_t>(iy) * xs2.w;
                    double* xgrow =
                        xgplane ? xgplane + static_cast<std::size_t>(iy) * xs2.w : nullptr;
                    const double* grow = gplane + static_cast<std::size_t>(y) * w_out2;
                    for (int x2 = 0; x2 < w_out2; ++x2) {
                      const int ix = x2 * stride - padding + kx;
                      if (ix < 0 || ix >= xs2.w) continue;
                      const double g = grow[x2];
                      kacc += g * xrow[ix];
                      if (xgrow) xgrow[ix] += g * wv;
                    }
                  }
                  if (kgplane) kgplane[ky * ks2.w + kx] += kacc;
                }
              }
            }
          }
        }
      });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var,
                   double eps, BnMode mode, double momentum) {
  const Shape xs = x.shape();
  auto check_param = [&](const char* name, const Tensor& t) {
    if (!(t.shape() == Shape{1, xs.c, 1, 1})) {
      throw ShapeError(std::string("batchnorm2d: ") + name + " has " +
                       std::to_string(t.shape().c) + " channels, input has " +
                       std::to_string(xs.c));
    }
  };
  check_param("gamma", gamma);
  check_param("beta", beta);
  check_param("running_mean", running_mean);
  check_param("running_var", running_var);
  if (eps <= 0.0) throw ConfigError("batchnorm2d: eps must be > 0");
  if (running_mean.requires_grad() || running_var.requires_grad()) {
    throw ConfigError("batchnorm2d: running statistics must not require grad");
  }

  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t per_channel = static_cast<std::size_t>(xs.n) * plane;
  std::vector<double> mean(xs.c), inv_std(xs.c);

  if (mode == BnMode::Eval) {
    for (int c = 0; c < xs.c; ++c) {
      const double var = running_var.data()[c];
      if (var < 0.0) throw ConfigError("batchnorm2d: running variance must be >= 0");
      mean[c] = running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(var + eps);
    }
  } else {
    for (int c = 0; c < xs.c; ++c) {
      double m = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const double* src = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) m += src[p];
      }
      m /= static_cast<double>(per_channel);
      double v = 0.0;
      for (int n = 0; n < xs.n; ++n) {
        const double* src = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = src[p] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(per_channel);  // population variance
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      // running update through the shared buffer handles
      Tensor rm = running_mean;
      Tensor rv = running_var;
      rm.data()[c] = (1.0 - momentum) * rm.data()[c] + momentum * m;
      rv.data()[c] = (1.0 - momentum) * rv.data()[c] + momentum * v;
    }
  }

  std::vector<double> out(xs.numel());
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double g = gamma.data()[c];
      const double b = beta.data()[c];
      const double m = mean[c];
      const double is = inv_std[c];
      const double* src = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      double* dst = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = g * (src[p] - m) * is + b;
    }
  }

  const bool train = mode == BnMode::Train;
  return make_op(
      xs, std::move(out), wants_grad({&x, &gamma, &beta}),
      {x.node(), gamma.node(), beta.node()},
      [mean2 = std::move(mean), inv2 = std::move(inv_std), train, plane,
       per_channel](Node& self) {
        Node* px = self.parents[0].get();
        Node* pg = self.parents[1].get();
        Node* pb = self.parents[2].get();
        const Shape xs2 = px->shape;
        if (px->requires_grad) px->ensure_grad();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();

        for (int c = 0; c < xs2.c; ++c) {
          const double m = mean2[c];
          const double is = inv2[c];
          const double gam = pg->data[c];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int n = 0; n < xs2.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * xs2.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const double g = self.grad[base + p];
              sum_g += g;
              sum_gx += g * (px->data[base + p] - m) * is;
            }
          }
          if (pb->requires_grad) pb->grad[c] += sum_g;
          if (pg->requires_grad) pg->grad[c] += sum_gx;
          if (!px->requires_grad) continue;
          if (!train) {
            const double f = gam * is;
            for (int n = 0; n < xs2.n; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * xs2.c + c) * plane;
              for (std::size_t p = 0; p < plane; ++p)
                px->grad[base + p] += f * self.grad[base + p];
            }
          } else {
            const double inv_m = 1.0 / static_cast<double>(per_channel);
            for (int n = 0; n < xs2.n; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * xs2.c + c) * plane;
              for (std::size_t p = 0; p < plane; ++p) {
                const double xhat = (px->data[base + p] - m) * is;
                const double g = self.grad[base + p];
                px->grad[base + p] +=
                    gam * is * (g - inv_m * sum_g - xhat * inv_m * sum_gx);
              }
            }
          }
        }
      });
}

// ---- losses ----------------------------------------------------------------

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits_mean", logits, targets);
  const std::size_t count = logits.numel();
  const double* pz = logits.data();
  const double* pt = targets.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double z = pz[i];
    acc += std::max(z, 0.0) - z * pt[i] + std::log1p(std::exp(-std::abs(z)));
  }
  acc /= static_cast<double>(count);
  auto targets_node = targets.node();
  return make_op(Shape{1, 1, 1, 1}, {acc}, wants_grad({&logits}), {logits.node()},
                 [targets_node, count](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const double g = self.grad[0] / static_cast<double>(count);
                   for (std::size_t i = 0; i < count; ++i) {
                     p->grad[i] += g * (sigmoid_scalar(p->data[i]) - targets_node->data[i]);
                   }
                 });
}

Tensor masked_l1_mean(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape("masked_l1_mean", pred, target);
  require_same_shape("masked_l1_mean", pred, mask);
  const std::size_t count = pred.numel();
  const double* pp = pred.data();
  const double* pt = target.data();
  const double* pm = mask.data();
  double mask_total = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    mask_total += pm[i];
    acc += pm[i] * std::abs(pp[i] - pt[i]);
  }
  const double denom = std::max(1.0, mask_total);
  acc /= denom;
  if (detail::kink_recording()) {
    std::vector<double> diffs(count);
    for (std::size_t i = 0; i < count; ++i) diffs[i] = pm[i] * (pp[i] - pt[i]);
    detail::record_kink_signature(
        mask_signature(diffs.data(), diffs.size(), [](double v) { return v > 0.0; }));
  }
  auto target_node = target.node();
  auto mask_node = mask.node();
  return make_op(Shape{1, 1, 1, 1}, {acc}, wants_grad({&pred}), {pred.node()},
                 [target_node, mask_node, denom, count](Node& self) {
                   Node* p = self.parents[0].get();
                   p->ensure_grad();
                   const double g = self.grad[0] / denom;
                   for (std::size_t i = 0; i < count; ++i) {
                     const double d = p->data[i] - target_node->data[i];
                     const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                     p->grad[i] += g * mask_node->data[i] * s;
                   }
                 });
}

}  // namespace amam

#pragma once

#include <vector>

#include "amam/tensor.hpp"

namespace amam {

enum class Activation { ReLU, SiLU, None };
enum class BnMode { Train, Eval };

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// factor * x + offset, constants.
Tensor affine(const Tensor& x, double factor, double offset = 0.0);
Tensor scale(const Tensor& x, double factor);
/// Broadcast-multiply by a scalar (1,1,1,1) tensor on the tape.
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

// ---- reductions ------------------------------------------------------------

/// Sum of all entries as a (1,1,1,1) tensor.
Tensor sum(const Tensor& x);

// ---- structural ------------------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& parts);
/// h contiguous channel groups; h must divide C.
std::vector<Tensor> split_channels(const Tensor& x, int groups);
Tensor slice_batch(const Tensor& x, int index);
Tensor concat_batch(const std::vector<Tensor>& parts);
Tensor upsample_nearest2x(const Tensor& x);
Tensor downsample_avg2x(const Tensor& x);
/// (1,C,H,W) -> (1,1,H*W,C): spatial positions become token rows.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, int h, int w);

// ---- matrices, stored as (1,1,rows,cols) -----------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Row softmax with max-subtraction stabilization.
Tensor softmax_lastdim(const Tensor& x);
/// softmax(scale * q k^T) v over token rows; fused so the attention matrix is
/// stored once rather than as three tape nodes.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);
/// Per-position linear map (N,Ci,H,W) x (1,1,Ci,Co) -> (N,Co,H,W), bias-free.
Tensor project_channels(const Tensor& x, const Tensor& weight);

// ---- conv / norm -----------------------------------------------------------

/// Cross-correlation with zero padding. kernel is (Co,Ci,k,k), bias (1,Co,1,1).
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

/// Eval normalizes with the supplied running statistics; Train normalizes with
/// per-channel batch statistics (population variance) and updates the running
/// buffers in place through their shared handles.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   const Tensor& running_mean, const Tensor& running_var,
                   double eps, BnMode mode, double momentum = 0.1);

// ---- losses ----------------------------------------------------------------

/// Numerically stable mean binary cross-entropy on logits; targets carry no grad.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);
/// sum(mask * |pred - target|) / max(1, sum(mask)); mask and target carry no grad.
Tensor masked_l1_mean(const Tensor& pred, const Tensor& target, const Tensor& mask);

}  // namespace amam

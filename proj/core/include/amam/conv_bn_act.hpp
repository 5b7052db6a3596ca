#pragma once

#include <random>
#include <vector>

#include "amam/ops.hpp"
#include "amam/tensor.hpp"

namespace amam {

/// One convolution + batch-norm + activation unit (CBR when the activation is
/// ReLU, CBS when it is SiLU). Running statistics are buffers, not parameters.
struct ConvBnAct {
  Tensor kernel;    // (c_out, c_in, k, k)
  Tensor bias;      // (1, c_out, 1, 1)
  Tensor bn_gamma;  // (1, c_out, 1, 1)
  Tensor bn_beta;   // (1, c_out, 1, 1)
  Tensor bn_mean;   // buffer
  Tensor bn_var;    // buffer
  double bn_eps = 1e-5;
  Activation act = Activation::ReLU;
  int stride = 1;
  int padding = 0;

  /// Kernel entries from a zero-mean uniform scaled by 1/sqrt(fan_in); bias 0;
  /// BN gamma 1, beta 0, running mean 0, running var 1.
  static ConvBnAct init(int c_in, int c_out, int ksize, int stride, int padding,
                        Activation act, std::mt19937_64& rng);

  /// Train mode updates the running-statistic buffers in place.
  Tensor forward(const Tensor& x, BnMode mode = BnMode::Eval, double bn_momentum = 0.1) const;

  std::vector<Tensor> parameters() const { return {kernel, bias, bn_gamma, bn_beta}; }

  int in_channels() const { return kernel.shape().c; }
  int out_channels() const { return kernel.shape().n; }
};

}  // namespace amam

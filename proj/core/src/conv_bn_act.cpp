#include "amam/conv_bn_act.hpp"

#include <cmath>

namespace amam {

ConvBnAct ConvBnAct::init(int c_in, int c_out, int ksize, int stride, int padding,
                          Activation act, std::mt19937_64& rng) {
  if (c_in < 1 || c_out < 1 || ksize < 1) {
    throw ConfigError("ConvBnAct::init: channel counts and kernel size must be >= 1");
  }
  ConvBnAct layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in) * ksize * ksize);
  layer.kernel = Tensor::uniform(Shape{c_out, c_in, ksize, ksize}, -bound, bound, rng, true);
  layer.bias = Tensor::zeros(Shape{1, c_out, 1, 1}, true);
  layer.bn_gamma = Tensor::full(Shape{1, c_out, 1, 1}, 1.0, true);
  layer.bn_beta = Tensor::zeros(Shape{1, c_out, 1, 1}, true);
  layer.bn_mean = Tensor::zeros(Shape{1, c_out, 1, 1}, false);
  layer.bn_var = Tensor::full(Shape{1, c_out, 1, 1}, 1.0, false);
  layer.act = act;
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor ConvBnAct::forward(const Tensor& x, BnMode mode, double bn_momentum) const {
  Tensor y = conv2d(x, kernel, bias, stride, padding);
  y = batchnorm2d(y, bn_gamma, bn_beta, bn_mean, bn_var, bn_eps, mode, bn_momentum);
  return activation(y, act);
}

}  // namespace amam

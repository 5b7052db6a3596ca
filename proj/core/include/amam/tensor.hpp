#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "amam/errors.hpp"

namespace amam {

/// Dense 4-D extent (batch, channels, height, width). Weight tensors reuse the
/// same container with their own dimension meanings, e.g. conv kernels are
/// (c_out, c_in, kh, kw) and matrices are (1, 1, rows, cols).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily during backward
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // accumulates this->grad into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

/// Thread-local switch that suppresses tape construction, used for
/// finite-difference evaluations and data generation.
bool grad_enabled();

}  // namespace detail

/// Disables gradient-tape recording for the current scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a dense double-precision 4-D array participating in a
/// reverse-mode gradient tape. Copies share the underlying buffer. A tape is
/// confined to one logical thread from construction through backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from_vector(Shape s, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Uniform values in [lo, hi), rounded to the nearest float so tensors
  /// round-trip bit-exactly through the 32-bit on-disk container.
  static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  double* data();
  const double* data() const;
  double& at(int n, int c, int y, int x);
  double at(int n, int c, int y, int x) const;
  /// Value of a (1,1,1,1) tensor.
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Reverse accumulation from a scalar (1,1,1,1) root. Gradients add into any
  /// grads already present on the leaves.
  void backward() const;

  /// Copy of the values with no tape attached.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

}  // namespace amam

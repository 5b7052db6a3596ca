#include "amam/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace amam {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
static void set_grad_enabled(bool v) { g_grad_enabled = v; }

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::grad_enabled()) {
  detail::set_grad_enabled(false);
}

NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(previous_); }

static void validate_shape(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("tensor shape " + to_string(s) + " has a dimension < 1");
  }
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  validate_shape(s);
  auto node = std::make_shared<detail::Node>();
  node->shape = s;
  node->data.assign(s.numel(), 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(Shape s, std::vector<double> data, bool requires_grad) {
  validate_shape(s);
  if (data.size() != s.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + to_string(s));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = s;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{1, 1, 1, 1}, value, requires_grad);
}

Tensor Tensor::uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
  Tensor t = zeros(s, requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.node_->data) v = static_cast<double>(static_cast<float>(dist(rng)));
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ShapeError("operation on an empty tensor handle");
  return node_->shape;
}

double* Tensor::data() {
  shape();
  return node_->data.data();
}

const double* Tensor::data() const {
  shape();
  return node_->data.data();
}

double& Tensor::at(int n, int c, int y, int x) {
  const Shape& s = shape();
  return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::at(int n, int c, int y, int x) const {
  const Shape& s = shape();
  return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::item() const {
  if (shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("item() requires shape (1,1,1,1), got " + to_string(shape()));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ShapeError("tensor has no gradient; run backward() first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("backward() requires a scalar root of shape (1,1,1,1), got " +
                     to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Post-order DFS over the requires_grad subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* parent = node->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = shape();
  node->data = node_->data;
  node->requires_grad = false;
  return Tensor(std::move(node));
}

}  // namespace amam

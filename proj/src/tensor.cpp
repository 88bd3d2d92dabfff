#include "bvq/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "bvq/errors.hpp"

namespace bvq {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(shape_size(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

void Tensor::require_defined(const char* op) const {
  if (!node_) throw ContractError(std::string(op) + " on an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined("shape()");
  return node_->shape;
}

std::size_t Tensor::size() const {
  require_defined("size()");
  return node_->data.size();
}

std::size_t Tensor::dim(std::size_t axis) const {
  require_defined("dim()");
  if (axis >= node_->shape.size()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::span<double> Tensor::values() {
  require_defined("values()");
  return node_->data;
}

std::span<const double> Tensor::values() const {
  require_defined("values()");
  return node_->data;
}

double Tensor::item() const {
  require_defined("item()");
  if (node_->data.size() != 1) {
    throw ContractError("item() requires a scalar, got shape " +
                        shape_to_string(node_->shape));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const {
  require_defined("requires_grad()");
  return node_->requires_grad;
}

void Tensor::set_requires_grad(bool enabled) {
  require_defined("set_requires_grad()");
  node_->requires_grad = enabled;
}

std::span<const double> Tensor::grad() const {
  require_defined("grad()");
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined("zero_grad()");
  node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detached(bool requires_grad) const {
  require_defined("detached()");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

void Tensor::backward() {
  require_defined("backward()");
  if (node_->data.size() != 1) {
    throw ContractError("backward() requires a scalar output, got shape " +
                        shape_to_string(node_->shape));
  }

  // Post-order over the operand DAG so each node appears after everything
  // it feeds. Iterative to keep deep graphs off the call stack.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      detail::TensorNode* parent = top.node->parents[top.next_parent].get();
      ++top.next_parent;
      if (seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch space for this pass; leaves keep theirs
  // so repeated backward calls accumulate.
  for (detail::TensorNode* n : order) {
    if (!n->leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace bvq

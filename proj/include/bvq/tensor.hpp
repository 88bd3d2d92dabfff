#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bvq {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// True while operations should record the differentiation graph.
bool grad_enabled();

/// Disables graph recording for its scope. Evaluation-only passes use this
/// to skip node bookkeeping entirely.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// One record of the differentiation graph. Leaves have no backward rule;
/// interior nodes hold their operands and a closure that distributes the
/// node's gradient to them.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  bool leaf() const { return !backprop; }
  /// Whether upstream operations should propagate gradient into this node.
  bool wants_grad() const { return requires_grad || !leaf(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense N-dimensional array of 64-bit reals with reverse-mode automatic
/// differentiation. Copies are shallow: they share the same storage and
/// graph record, like handles.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  void set_requires_grad(bool enabled);
  /// Accumulated gradient; empty span if none has been recorded yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a scalar output. Every reachable leaf with
  /// requires_grad accumulates d(output)/d(leaf); repeated calls keep
  /// accumulating until gradients are explicitly zeroed.
  void backward();

  /// Same values, detached from the graph (fresh leaf).
  Tensor detached(bool requires_grad = false) const;

  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
  void require_defined(const char* op) const;
};

}  // namespace bvq

#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable node. Operations on tensors
// that require gradients record their inputs and a backward closure; calling
// backward() on a scalar walks the recorded graph in reverse topological
// order (see Tape) and accumulates d(root)/d(node) into every reachable
// node's grad buffer. Leaf gradients accumulate across calls until
// zero_grad().
//
// Inside a NoGradGuard scope nothing is recorded, which is how the matcher
// and evaluation code run the model.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qeot {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  // Allocated (zero-filled) on first use when requires_grad is set.
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Only for leaves (parameters, optimizer updates, finite-difference probes).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  // Empty span until a backward pass reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Equivalent to qeot::backward(*this).
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Whether new operations record gradients on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// The nodes reachable from a root, in topological order (inputs before the
// nodes that consume them). Backward replays it from the back, visiting
// every node exactly once.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<Node*>& nodes() const { return nodes_; }
  void replay_backward() const;

 private:
  std::vector<Node*> nodes_;
};

// Seeds d(root)/d(root) = 1 and back-propagates. Throws ContractError when
// root is not a single-element tensor.
void backward(const Tensor& root);

// Builds an op result. When grad mode is on and any input requires grad the
// node keeps its inputs and backward closure; otherwise both are dropped.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

}  // namespace qeot

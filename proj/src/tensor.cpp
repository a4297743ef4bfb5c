#include "qeot/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "qeot/errors.hpp"

namespace qeot {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->inputs.empty()) throw ContractError("mutable_data on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
  std::size_t off = 0;
  std::size_t i = 0;
  for (std::size_t idx : index) {
    if (idx >= node_->shape[i]) throw DimensionError("index out of range for " + shape_str(shape()));
    off = off * node_->shape[i] + idx;
    ++i;
  }
  return node_->value[off];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const { qeot::backward(*this); }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay_backward() const {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got " +
                        (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;
  const Tape tape = Tape::record(root);
  root.node()->ensure_grad()[0] += 1.0;
  tape.replay_backward();
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (Tensor& t : inputs) node->inputs.push_back(t.shared());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace qeot

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flowadapter/core/matrix.hpp"

// Tape-free reverse-mode differentiation over Matrix values. Every op returns
// a Var whose node keeps its inputs alive and knows how to push its gradient
// back into them; Var::backward() walks the graph in reverse topological order.

namespace fa::ag {

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
    return grad;
  }
  Node& input(std::size_t i) { return *inputs[i]; }
};

// Shared handle to a graph node. Copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // Direct mutation is reserved for optimizers and initializers.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  int rows() const { return node_->value.rows(); }
  int cols() const { return node_->value.cols(); }
  double item() const;

  // Seeds d(self)/d(self) = 1; self must be 1 x 1.
  void backward() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result node of an op. The backward closure is only attached when
// grad mode is on and at least one input requires a gradient.
Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

Var constant(Matrix value);
Var parameter(Matrix value);

// A trainable tensor with a stable name (used for checkpoints and optimizers).
struct NamedParam {
  std::string name;
  Var var;
};

using ParamList = std::vector<NamedParam>;

// Snapshot of parameter values, keyed by name in declaration order.
using StateDict = std::vector<std::pair<std::string, Matrix>>;

StateDict snapshot(const ParamList& params);
void restore(const ParamList& params, const StateDict& state);
void zero_grads(const ParamList& params);
double global_grad_norm(const ParamList& params);

}  // namespace fa::ag

#include "flowadapter/core/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "flowadapter/core/errors.hpp"

namespace fa::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (value().rows() != 1 || value().cols() != 1) throw UsageError("Var::item on non-scalar " + value().shape_string());
  return value()(0, 0);
}

void Var::backward() const {
  if (!defined()) throw UsageError("backward on undefined Var");
  if (value().rows() != 1 || value().cols() != 1) throw UsageError("backward requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var& v : inputs) any = any || v.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const Var& v : inputs) node->inputs.push_back(v.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Var constant(Matrix value) { return Var(std::move(value), false); }
Var parameter(Matrix value) { return Var(std::move(value), true); }

StateDict snapshot(const ParamList& params) {
  StateDict out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name, p.var.value());
  return out;
}

void restore(const ParamList& params, const StateDict& state) {
  if (params.size() != state.size()) throw ConfigError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != state[i].first) throw ConfigError("restore: expected " + params[i].name + ", got " + state[i].first);
    Var v = params[i].var;
    if (!v.value().same_shape(state[i].second))
      throw ConfigError("restore: shape mismatch for " + params[i].name);
    v.mutable_value() = state[i].second;
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

double global_grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    const Matrix& g = p.var.grad();
    for (double x : g.values()) sq += x * x;
  }
  return std::sqrt(sq);
}

}  // namespace fa::ag

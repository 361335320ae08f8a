#include "jepa/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "jepa/errors.hpp"
#include "jepa/ops.hpp"

namespace jepa::ad {
namespace {

thread_local bool g_grad_mode = true;

class GradModeScope {
 public:
  explicit GradModeScope(bool enabled) : previous_(g_grad_mode) { g_grad_mode = enabled; }
  ~GradModeScope() { g_grad_mode = previous_; }

 private:
  bool previous_;
};

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw ContractError("access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw ContractError("access to undefined Var");
  if (!node_->leaf) throw ContractError("mutable_value() on a non-leaf Var");
  return node_->value;
}

void Var::set_requires_grad(bool on) {
  if (!node_ || !node_->leaf) throw ContractError("set_requires_grad() on a non-leaf Var");
  node_->requires_grad = on;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const Var& Var::input(std::size_t i) const { return node_->inputs.at(i); }

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

Var make_result(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool any = false;
  if (g_grad_mode) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (any) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, const Var& grad_output,
                      bool create_graph) {
  if (!output.defined()) throw ContractError("grad() of undefined output");
  if (!grad_output.defined() && output.numel() != 1) {
    throw ContractError("grad() needs a scalar output, got shape " + shape_str(output.shape()));
  }
  if (grad_output.defined() && grad_output.shape() != output.shape()) {
    throw DimensionError("grad_output shape does not match output");
  }

  std::vector<Var> result(inputs.size());
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = constant(Tensor(inputs[i].shape()));
    return result;
  }

  // Iterative post-order DFS over the differentiable subgraph.
  std::vector<Node*> order;
  std::unordered_map<Node*, std::size_t> position;
  {
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].node();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        position[node] = order.size();
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  // A node needs a gradient iff it is a requested input or feeds one.
  std::unordered_set<Node*> wanted;
  for (const auto& in : inputs) {
    if (in.defined()) wanted.insert(in.node());
  }
  std::unordered_set<Node*> needed;
  for (Node* node : order) {  // children precede parents in post-order
    bool need = wanted.count(node) > 0;
    for (const auto& in : node->inputs) need = need || needed.count(in.node()) > 0;
    if (need) needed.insert(node);
  }

  GradModeScope scope(create_graph);
  std::unordered_map<Node*, Var> grads;
  grads[output.node()] = grad_output.defined() ? grad_output : constant(Tensor(output.shape(), 1.0));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || node->leaf || !needed.count(node)) continue;
    std::vector<bool> needs(node->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < needs.size(); ++i) {
      needs[i] = node->inputs[i].requires_grad() && needed.count(node->inputs[i].node()) > 0;
      any = any || needs[i];
    }
    if (!any) continue;
    Var self(node->shared_from_this());
    const Var g = found->second;
    if (!wanted.count(node)) grads.erase(found);
    BackwardCtx ctx{self, needs};
    std::vector<Var> input_grads = node->backward(g, ctx);
    for (std::size_t i = 0; i < needs.size(); ++i) {
      if (!needs[i] || !input_grads[i].defined()) continue;
      Node* target = node->inputs[i].node();
      auto [slot, inserted] = grads.try_emplace(target, input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto found = inputs[i].defined() ? grads.find(inputs[i].node()) : grads.end();
    result[i] = found != grads.end() ? found->second : constant(Tensor(inputs[i].shape()));
  }
  return result;
}

}  // namespace jepa::ad

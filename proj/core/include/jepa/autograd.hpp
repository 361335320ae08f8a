#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "jepa/tensor.hpp"

namespace jepa::ad {

struct Node;

// Handle to a value in the recorded computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  // Leaf holding `value`; gradients can be requested for it when requires_grad.
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  // Leaves only: in-place parameter updates between forward passes.
  Tensor& mutable_value();
  // Leaves only: freezes or unfreezes a parameter.
  void set_requires_grad(bool on);
  const Shape& shape() const { return value().shape(); }
  std::int64_t numel() const { return value().numel(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Node* node() const { return node_.get(); }
  const Var& input(std::size_t i) const;

 private:
  std::shared_ptr<Node> node_;
};

// Backward context handed to an op's gradient rule.
struct BackwardCtx {
  const Var& self;
  const std::vector<bool>& needs;  // needs[i]: gradient for input i is wanted
  bool need(std::size_t i) const { return needs[i]; }
  const Var& input(std::size_t i) const { return self.input(i); }
};

// Maps the output gradient to one gradient per input. Undefined entries mean
// "no contribution". Rules are written with differentiable ops so that
// gradients can themselves be differentiated (create_graph).
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const BackwardCtx& ctx)>;

struct Node : std::enable_shared_from_this<Node> {
  Tensor value;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<Var> inputs;
  BackwardFn backward;
};

// Records an op result. Falls back to a constant when recording is off or no
// input requires a gradient.
Var make_result(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

inline Var constant(Tensor value) { return Var(std::move(value), false); }

bool grad_mode_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Reverse-mode gradients of `output` with respect to `inputs`. `output` must be
// a scalar unless `grad_output` is given. Inputs the output does not depend on
// receive zeros. With create_graph the returned gradients are themselves
// recorded and can be differentiated again.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, const Var& grad_output = {},
                      bool create_graph = false);

}  // namespace jepa::ad

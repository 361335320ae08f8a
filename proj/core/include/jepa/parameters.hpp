#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jepa/autograd.hpp"

namespace jepa {

struct Parameter {
  std::string name;
  ad::Var var;  // leaf
  Tensor grad;  // same shape as var
  Tensor m;     // Adam first moment
  Tensor v;     // Adam second moment
};

// Named tensors exchanged with checkpoints.
using StateDict = std::map<std::string, Tensor>;

// Trainable parameters plus non-trainable buffers (batch-norm running
// statistics) of one network. Move-only: entries are shared graph leaves.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  ad::Var add(const std::string& name, Tensor init);
  ad::Var add_buffer(const std::string& name, Tensor init);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<ad::Var> vars() const;
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::int64_t count() const;
  void zero_grad();
  // Adds gradients (one per parameter, in order) into the grad buffers.
  void accumulate_grad(const std::vector<ad::Var>& grads);
  void set_trainable(bool on);

  // Parameters and buffers by name.
  StateDict state() const;
  void load_state(const StateDict& state, const std::string& prefix = "");

  // FNV-1a over names and raw bytes of every parameter and buffer.
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter> params_;
  std::vector<std::pair<std::string, ad::Var>> buffers_;
};

}  // namespace jepa

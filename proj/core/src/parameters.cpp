#include "jepa/parameters.hpp"

#include <cstring>
#include <utility>

#include "jepa/errors.hpp"

namespace jepa {

ad::Var ParameterSet::add(const std::string& name, Tensor init) {
  for (const auto& p : params_) {
    if (p.name == name) throw ConfigError("duplicate parameter name " + name);
  }
  Shape shape = init.shape();
  Parameter p{name, ad::Var(std::move(init), true), Tensor(shape), Tensor(shape), Tensor(shape)};
  params_.push_back(std::move(p));
  return params_.back().var;
}

ad::Var ParameterSet::add_buffer(const std::string& name, Tensor init) {
  buffers_.emplace_back(name, ad::Var(std::move(init), false));
  return buffers_.back().second;
}

std::vector<ad::Var> ParameterSet::vars() const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var);
  return out;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named " + name);
}

Parameter& ParameterSet::at(const std::string& name) {
  return const_cast<Parameter&>(std::as_const(*this).at(name));
}

std::int64_t ParameterSet::count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.var.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParameterSet::accumulate_grad(const std::vector<ad::Var>& grads) {
  if (grads.size() != params_.size()) throw ContractError("gradient count does not match parameter count");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor& g = grads[i].value();
    Tensor& dst = params_[i].grad;
    if (g.shape() != dst.shape()) throw DimensionError("gradient shape mismatch for " + params_[i].name);
    for (std::int64_t j = 0; j < g.numel(); ++j) dst[j] += g[j];
  }
}

void ParameterSet::set_trainable(bool on) {
  for (auto& p : params_) p.var.set_requires_grad(on);
}

StateDict ParameterSet::state() const {
  StateDict out;
  for (const auto& p : params_) out[p.name] = p.var.value();
  for (const auto& [name, var] : buffers_) out[name] = var.value();
  return out;
}

void ParameterSet::load_state(const StateDict& state, const std::string& prefix) {
  auto assign = [&](const std::string& name, ad::Var& var) {
    auto it = state.find(prefix + name);
    if (it == state.end()) throw FormatError("missing tensor " + prefix + name);
    if (it->second.shape() != var.shape()) {
      throw FormatError("tensor " + prefix + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(var.shape()));
    }
    var.mutable_value() = it->second;
  };
  for (auto& p : params_) assign(p.name, p.var);
  for (auto& [name, var] : buffers_) assign(name, var);
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, tensor] : state()) {
    mix(name.data(), name.size());
    mix(tensor.ptr(), static_cast<std::size_t>(tensor.numel()) * sizeof(double));
  }
  return h;
}

}  // namespace jepa

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jepa/autograd.hpp"
#include "jepa/rng.hpp"

namespace jepa::gradcheck {

struct GradCheck {
  double max_rel_error = 0.0;  // worst over sampled coordinates and the directional check
  std::int64_t coordinates = 0;
  std::int64_t leaf_values = 0;  // total size of the differentiated leaves
};

// Central finite differences (step h) against reverse-mode gradients of the
// scalar `f` with respect to the leaf tensors `leaves`. Checks up to
// `per_leaf` randomly chosen coordinates of each leaf plus one random
// direction over all of them. Relative error: |a - n| / max(|a|, |n|, floor).
GradCheck check_gradients(const std::function<ad::Var()>& f, const std::vector<ad::Var>& leaves, Rng& rng,
                          double h = 1e-5, std::int64_t per_leaf = 24, double floor = 1e-6);

// Named gradient checks across the loss functions, the networks and the
// rollout chain, each at a given seed.
struct SuiteCase {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

std::vector<SuiteCase> gradient_suite();

}  // namespace jepa::gradcheck

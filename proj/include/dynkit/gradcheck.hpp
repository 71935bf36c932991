#pragma once

#include <functional>
#include <vector>

#include "dynkit/rng.hpp"
#include "dynkit/tensor.hpp"

namespace dynkit::diff {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t components = 0;
};

// Compares tape gradients of the scalar `f()` against central finite
// differences over every element of `inputs` (or a random subset of
// max_per_input per tensor when rng is given). `f` must be pure in the
// input values. rel = |a - n| / max(|a|, |n|, 1).
GradCheckResult grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& inputs, double h = 1e-5,
                           int64_t max_per_input = -1, Rng* rng = nullptr);

}  // namespace dynkit::diff

#include "dynkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dynkit::diff {

GradCheckResult grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& inputs, double h,
                           int64_t max_per_input, Rng* rng) {
  for (auto in : inputs) in.set_requires_grad(true);

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    for (const auto& in : inputs)
      analytic.push_back(in.has_grad() ? in.grad()
                                       : std::vector<double>(in.size(), 0.0));
  }
  for (auto in : inputs) in.zero_grad();

  GradCheckResult res;
  NoTape guard;
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor in = inputs[t];
    std::vector<int64_t> idxs;
    if (max_per_input > 0 && in.size() > max_per_input && rng) {
      for (int64_t i = 0; i < max_per_input; ++i)
        idxs.push_back(rng->uniform_int(in.size()));
    } else {
      idxs.resize(in.size());
      for (int64_t i = 0; i < in.size(); ++i) idxs[i] = i;
    }
    for (int64_t i : idxs) {
      double saved = in.data()[i];
      in.data()[i] = saved + h;
      double up = f().item();
      in.data()[i] = saved - h;
      double dn = f().item();
      in.data()[i] = saved;
      double num = (up - dn) / (2.0 * h);
      double ana = analytic[t][i];
      double rel = std::abs(ana - num) /
                   std::max({std::abs(ana), std::abs(num), 1.0});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.components;
    }
  }
  return res;
}

}  // namespace dynkit::diff

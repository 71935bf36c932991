#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dynkit/ops.hpp"
#include "dynkit/rng.hpp"
#include "dynkit/tensor.hpp"

namespace dynkit::diff {

// Named trainable tensors in insertion order (the order fixes optimizer
// and checkpoint layout, so creation order must be deterministic).
class ParamStore {
 public:
  Tensor create(const std::string& name, Shape shape,
                std::vector<double> init);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  size_t size() const { return items_.size(); }
  int64_t total_elements() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

std::vector<double> xavier_uniform(int64_t fan_in, int64_t fan_out,
                                   int64_t count, Rng& rng);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  int64_t in = 0, out = 0;

  static Linear create(ParamStore& ps, const std::string& prefix, int64_t in,
                       int64_t out, Rng& rng, bool zero_init = false);
  // x [..., in] -> [..., out]; flattens leading axes around one gemm.
  Tensor apply(const Tensor& x) const;
};

// Fully connected stack with relu between layers, none after the last.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp create(ParamStore& ps, const std::string& prefix,
                    const std::vector<int64_t>& dims, Rng& rng,
                    bool zero_init_last = false);
  Tensor apply(const Tensor& x) const;
};

// 3x3 same-size convolution with reflect borders as a named parameter pair.
struct Conv3 {
  Tensor w;  // [3,3,in,out]
  Tensor b;  // [out]

  static Conv3 create(ParamStore& ps, const std::string& prefix, int64_t in,
                      int64_t out, Rng& rng, double bias_init = 0.0);
  // x [H,W,in] -> [H,W,out]
  Tensor apply(const Tensor& x) const;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg);

  // Applies one update from the gradients currently on the parameters.
  // Throws NumericError if any parameter is missing a gradient or the
  // global gradient norm is non-finite. Returns the pre-clip norm.
  double step();

  AdamConfig& config() { return cfg_; }
  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  // Moment buffers in parameter-store order, exposed for checkpointing.
  std::vector<double>& m(size_t i) { return m_[i]; }
  std::vector<double>& v(size_t i) { return v_[i]; }

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace dynkit::diff

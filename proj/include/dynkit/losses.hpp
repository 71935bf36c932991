#pragma once

#include <map>
#include <string>
#include <vector>

#include "dynkit/ops.hpp"

namespace dynkit {

// Robust color penalty: rho(x) = (|x|^2 + eps^2)^alpha applied to each row
// of a residual matrix [R,D], giving [R]. alpha = 0.5 is the classic
// Charbonnier; the default is slightly heavier-tailed.
diff::Tensor charbonnier(const diff::Tensor& residual, double alpha = 0.45,
                         double eps = 1e-3);

double median(std::vector<double> v);

// A partial reduction: sum of per-row values plus the row mass that should
// normalize it. Batches rendered in several groups merge by adding both.
struct WeightedSum {
  diff::Tensor sum;  // scalar
  double count = 0;
};

// rho of (rendered - target) per ray, scaled by value_weight (for example
// the occlusion confidence) and restricted to include != 0. The count is
// the number of included rays, not the weight mass.
WeightedSum color_term(const diff::Tensor& rendered,  // [R,3]
                       const std::vector<double>& target,
                       const std::vector<double>& value_weight,
                       const std::vector<double>& include);

// L1 between rendered expected depth and a prior after median-ratio
// alignment s = median(prior / rendered) over included rays. The scale is
// computed from primal values, so no gradient flows through it. Rays whose
// accumulated opacity is below alpha_min are dropped.
WeightedSum depth_term(const diff::Tensor& rendered_depth,  // [R,1]
                       const diff::Tensor& alpha,           // [R,1]
                       const std::vector<double>& prior,
                       std::vector<double> include, double alpha_min = 0.1);

// L1 between an induced pixel displacement and a prior flow: residual rows
// are (induced - base - prior), summed |du| + |dv| per ray.
WeightedSum flow_term(const diff::Tensor& induced_uv,  // [R,2]
                      const std::vector<double>& base_uv,
                      const std::vector<double>& prior_uv,
                      const std::vector<double>& include);

// Binary entropy of the dynamic density share p = s_dy/(s_st + s_dy + 1e-8),
// counted only where the total mass (s_st + s_dy) * delta exceeds the gate.
WeightedSum entropy_term(const diff::Tensor& sigma_st,  // [R,S]
                         const diff::Tensor& sigma_dy,  // [R,S]
                         const diff::Tensor& depths, double t_far,
                         double gate = 1e-3);

// Mass concentration penalty sum_{k,m} w_k w_m |s_k - s_m|
// + (1/3) sum_k w_k^2 width_k on explicit normalized midpoints.
WeightedSum distortion_from_midpoints(const diff::Tensor& weights,  // [R,S]
                                      const diff::Tensor& s_mid,    // [R,S]
                                      const diff::Tensor& widths);  // [R,S]

// Same, deriving normalized interval midpoints and widths from sample
// depths on [t_near, t_far].
WeightedSum distortion_term(const diff::Tensor& weights,
                            const diff::Tensor& depths, double t_near,
                            double t_far);

// Heavy-tailed reconstruction likelihood with a learned per-ray scale:
// log(beta + |residual|^2 / beta). Minimized over beta at beta = |residual|.
WeightedSum cauchy_term(const diff::Tensor& composite,  // [R,3]
                        const std::vector<double>& target,
                        const diff::Tensor& beta,  // [R,1]
                        const std::vector<double>& include);

struct LossWeights {
  double pho = 1.0;
  double mask_dy = 0.5, mask_st = 0.5;
  double depth = 0.05, flow = 0.02;
  double cycle = 0.1, smooth = 0.05;
  double entropy = 1e-3, dist = 1e-3;
  int mask_decay_interval = 2000;  // steps between dynamic-mask decays
  double mask_decay_factor = 5.0;

  double mask_dy_at(int step) const;
};

// Gathers weighted components across render groups, then produces the
// scalar total plus a per-component breakdown that sums to it exactly.
class LossAccumulator {
 public:
  // Adds rows to a mean-style component; groups of the same name merge
  // before normalization.
  void add(const std::string& name, const WeightedSum& part, double lambda);
  // Adds an already-reduced scalar (counted as one unit of mass).
  void add_scalar(const std::string& name, const diff::Tensor& value,
                  double lambda);

  // Weighted total. Throws NumericError naming the first non-finite
  // component. Components with zero mass contribute zero.
  diff::Tensor total();
  // Weighted per-component values, filled by total().
  const std::map<std::string, double>& breakdown() const { return breakdown_; }

 private:
  struct Part {
    diff::Tensor sum;
    double count = 0;
    double lambda = 0;
  };
  std::map<std::string, Part> parts_;
  std::map<std::string, double> breakdown_;
};

}  // namespace dynkit

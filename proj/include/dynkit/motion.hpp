#pragma once

#include <memory>
#include <vector>

#include "dynkit/geometry.hpp"
#include "dynkit/nn.hpp"

namespace dynkit {

struct MotionConfig {
  int num_frames = 0;   // N
  int num_coeffs = 6;   // L
  int posenc_xyz = 16;  // frequencies for gamma(X)
  int posenc_time = 8;  // frequencies for gamma(i)
  int hidden = 64;
  int window = 3;       // source-view radius r
};

// DCT-II columns with the constant mode dropped (it cancels in
// displacement differences): B[j][l] = cos(pi (l+1) (2j+1) / (2N)).
// Returned row-major [N, L].
std::vector<double> init_dct_basis(int num_frames, int num_coeffs);

// Normalized time embedding gamma(i) used by all motion models.
std::vector<double> time_embedding(int frame, int num_frames, int freqs);

// A motion model answers: where does a point seen at frame i sit at
// frame j? Displacements are differentiable in both the query points and
// the model parameters.
class MotionModel {
 public:
  virtual ~MotionModel() = default;
  // x [Q,3] at frame i -> displacements [Q, |js|, 3].
  virtual diff::Tensor displacements(const diff::Tensor& x, int i,
                                     const std::vector<int>& js) = 0;
  virtual int frames() const = 0;

  // x + displacement, [Q,3].
  diff::Tensor correspond(const diff::Tensor& x, int i, int j);
  // x broadcast against a window: [Q, |js|, 3] of warped positions.
  diff::Tensor correspond_window(const diff::Tensor& x, int i,
                                 const std::vector<int>& js);
};

// Trajectory field over the learnable basis: one MLP query per point
// yields coefficients valid for every destination frame.
class TrajectoryMotion : public MotionModel {
 public:
  TrajectoryMotion(diff::ParamStore& ps, const MotionConfig& cfg, Rng& rng);

  // [Q,3] at frame i -> coefficients [Q, L, 3].
  diff::Tensor coefficients(const diff::Tensor& x, int i);
  // Gamma values of the trajectory at each j: [Q, |js|, 3].
  diff::Tensor trajectory(const diff::Tensor& coeffs,
                          const std::vector<int>& js);
  // (b_j - b_i) contraction: [Q, |js|, 3].
  diff::Tensor displace_coeffs(const diff::Tensor& coeffs, int i,
                               const std::vector<int>& js);

  diff::Tensor displacements(const diff::Tensor& x, int i,
                             const std::vector<int>& js) override;
  int frames() const override { return cfg_.num_frames; }

  const MotionConfig& config() const { return cfg_; }
  diff::Tensor basis() const { return basis_; }

 private:
  diff::Tensor query_mlp(const diff::Tensor& x, int i) const;

  MotionConfig cfg_;
  diff::Tensor basis_;  // [N, L]
  diff::Linear l0_, l1_, l2_;
};

// Everything static (motion ablation baseline).
class ZeroMotion : public MotionModel {
 public:
  explicit ZeroMotion(int num_frames) : n_(num_frames) {}
  diff::Tensor displacements(const diff::Tensor& x, int i,
                             const std::vector<int>& js) override;
  int frames() const override { return n_; }

 private:
  int n_;
};

// Per-step forward/backward scene flow, chained hop by hop to reach
// farther frames (each hop is a fresh MLP query at the warped point).
class SceneFlowMotion : public MotionModel {
 public:
  SceneFlowMotion(diff::ParamStore& ps, const MotionConfig& cfg, Rng& rng);
  diff::Tensor displacements(const diff::Tensor& x, int i,
                             const std::vector<int>& js) override;
  int frames() const override { return cfg_.num_frames; }

 private:
  diff::Tensor query_mlp(const diff::Tensor& x, int i) const;

  MotionConfig cfg_;
  diff::Linear l0_, l1_, l2_;
};

// Direct prediction of 2r displacement vectors (one per window offset),
// no shared trajectory structure.
class MultiFlowMotion : public MotionModel {
 public:
  MultiFlowMotion(diff::ParamStore& ps, const MotionConfig& cfg, Rng& rng);
  diff::Tensor displacements(const diff::Tensor& x, int i,
                             const std::vector<int>& js) override;
  int frames() const override { return cfg_.num_frames; }

 private:
  MotionConfig cfg_;
  diff::Linear l0_, l1_, l2_;
};

// Round-trip consistency: mean over points of |go(i->j) then (j->i) - x|_1.
diff::Tensor cycle_loss(MotionModel& model, const diff::Tensor& x, int i,
                        int j);

// Temporal second difference of the motion path around frame i: mean over
// j in [i-r+1, i+r-1] and points of |D(j+1) - 2 D(j) + D(j-1)|_1 with
// frame indices clamped to the valid range. Displacement differences equal
// trajectory differences, so this is representation-agnostic.
diff::Tensor smoothness_loss(MotionModel& model, const diff::Tensor& x, int i,
                             int radius);

}  // namespace dynkit

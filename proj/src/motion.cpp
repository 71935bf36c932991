#include "dynkit/motion.hpp"

#include <algorithm>
#include <cmath>

namespace dynkit {

using diff::Shape;
using diff::Tensor;

std::vector<double> init_dct_basis(int num_frames, int num_coeffs) {
  if (num_coeffs < 1 || num_coeffs >= num_frames)
    throw ConfigError("motion basis needs 1 <= L < N, got L=" +
                      std::to_string(num_coeffs) +
                      " N=" + std::to_string(num_frames));
  std::vector<double> b(static_cast<size_t>(num_frames) * num_coeffs);
  for (int j = 0; j < num_frames; ++j)
    for (int l = 0; l < num_coeffs; ++l)
      b[j * num_coeffs + l] =
          std::cos(M_PI * (l + 1) * (2.0 * j + 1.0) / (2.0 * num_frames));
  return b;
}

std::vector<double> time_embedding(int frame, int num_frames, int freqs) {
  if (num_frames < 2) throw ConfigError("need at least two frames");
  double t = static_cast<double>(frame) / static_cast<double>(num_frames - 1);
  return posenc({t}, freqs);
}

static void check_frame(int i, int n) {
  if (i < 0 || i >= n)
    throw ConfigError("frame index " + std::to_string(i) +
                      " outside [0," + std::to_string(n) + ")");
}

Tensor MotionModel::correspond(const Tensor& x, int i, int j) {
  Tensor d = displacements(x, i, {j});
  return diff::add(x, diff::reshape(d, {x.dim(0), 3}));
}

Tensor MotionModel::correspond_window(const Tensor& x, int i,
                                      const std::vector<int>& js) {
  Tensor d = displacements(x, i, js);
  return diff::add(d, diff::reshape(x, {x.dim(0), 1, 3}));
}

// Shared trunk builder: posenc(X) concat gamma(i), broadcast per point.
static Tensor motion_input(const Tensor& x, int i, const MotionConfig& cfg) {
  if (x.ndim() != 2 || x.dim(1) != 3)
    throw ShapeError("motion query expects [Q,3], got " +
                           diff::shape_str(x.shape()));
  check_frame(i, cfg.num_frames);
  Tensor enc = posenc_t(x, cfg.posenc_xyz);
  auto emb = time_embedding(i, cfg.num_frames, cfg.posenc_time);
  Tensor t_row(Shape{1, static_cast<int64_t>(emb.size())}, emb);
  Tensor t_all =
      diff::broadcast_to(t_row, {x.dim(0), static_cast<int64_t>(emb.size())});
  return diff::concat({enc, t_all}, 1);
}

static int64_t motion_input_dim(const MotionConfig& cfg) {
  return 3 * (1 + 2 * cfg.posenc_xyz) + 1 + 2 * cfg.posenc_time;
}

TrajectoryMotion::TrajectoryMotion(diff::ParamStore& ps,
                                   const MotionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  basis_ = ps.create("motion.basis", {cfg.num_frames, cfg.num_coeffs},
                     init_dct_basis(cfg.num_frames, cfg.num_coeffs));
  int64_t in = motion_input_dim(cfg);
  l0_ = diff::Linear::create(ps, "motion.mlp.0", in, cfg.hidden, rng);
  l1_ = diff::Linear::create(ps, "motion.mlp.1", cfg.hidden, cfg.hidden, rng);
  l2_ = diff::Linear::create(ps, "motion.mlp.2", cfg.hidden,
                             3 * cfg.num_coeffs, rng, /*zero_init=*/true);
}

Tensor TrajectoryMotion::query_mlp(const Tensor& x, int i) const {
  Tensor h = diff::softplus(l0_.apply(motion_input(x, i, cfg_)));
  h = diff::softplus(l1_.apply(h));
  return l2_.apply(h);
}

Tensor TrajectoryMotion::coefficients(const Tensor& x, int i) {
  Tensor out = query_mlp(x, i);
  return diff::reshape(out, {x.dim(0), cfg_.num_coeffs, 3});
}

// Stacks the chosen basis rows into [J, L].
static Tensor basis_rows(const Tensor& basis, const std::vector<int>& js,
                         int n) {
  std::vector<Tensor> rows;
  rows.reserve(js.size());
  for (int j : js) {
    check_frame(j, n);
    rows.push_back(diff::slice(basis, 0, j, 1));
  }
  return diff::concat(rows, 0);
}

Tensor TrajectoryMotion::trajectory(const Tensor& coeffs,
                                    const std::vector<int>& js) {
  Tensor rows = basis_rows(basis_, js, cfg_.num_frames);
  return diff::matmul(rows, coeffs);  // [J,L] x [Q,L,3] -> [Q,J,3]
}

Tensor TrajectoryMotion::displace_coeffs(const Tensor& coeffs, int i,
                                         const std::vector<int>& js) {
  check_frame(i, cfg_.num_frames);
  Tensor rows = basis_rows(basis_, js, cfg_.num_frames);
  Tensor row_i = diff::slice(basis_, 0, i, 1);  // [1, L]
  Tensor deltas = diff::sub(rows, row_i);       // exact zero row where j == i
  return diff::matmul(deltas, coeffs);
}

Tensor TrajectoryMotion::displacements(const Tensor& x, int i,
                                       const std::vector<int>& js) {
  return displace_coeffs(coefficients(x, i), i, js);
}

Tensor ZeroMotion::displacements(const Tensor& x, int i,
                                 const std::vector<int>& js) {
  check_frame(i, n_);
  for (int j : js) check_frame(j, n_);
  return Tensor::zeros({x.dim(0), static_cast<int64_t>(js.size()), 3});
}

SceneFlowMotion::SceneFlowMotion(diff::ParamStore& ps, const MotionConfig& cfg,
                                 Rng& rng)
    : cfg_(cfg) {
  int64_t in = motion_input_dim(cfg);
  l0_ = diff::Linear::create(ps, "motion.mlp.0", in, cfg.hidden, rng);
  l1_ = diff::Linear::create(ps, "motion.mlp.1", cfg.hidden, cfg.hidden, rng);
  // Two 3-vectors: flow to the next frame and to the previous frame.
  l2_ = diff::Linear::create(ps, "motion.mlp.2", cfg.hidden, 6, rng,
                             /*zero_init=*/true);
}

Tensor SceneFlowMotion::query_mlp(const Tensor& x, int i) const {
  Tensor h = diff::softplus(l0_.apply(motion_input(x, i, cfg_)));
  h = diff::softplus(l1_.apply(h));
  return l2_.apply(h);
}

Tensor SceneFlowMotion::displacements(const Tensor& x, int i,
                                      const std::vector<int>& js) {
  check_frame(i, cfg_.num_frames);
  int64_t q = x.dim(0);
  std::vector<Tensor> per_j;
  for (int j : js) {
    check_frame(j, cfg_.num_frames);
    if (j == i) {
      per_j.push_back(Tensor::zeros({q, 1, 3}));
      continue;
    }
    int step = j > i ? 1 : -1;
    Tensor cur = x;
    for (int k = i; k != j; k += step) {
      Tensor flows = query_mlp(cur, k);
      Tensor hop = step > 0 ? diff::slice(flows, 1, 0, 3)
                            : diff::slice(flows, 1, 3, 3);
      cur = diff::add(cur, hop);
    }
    per_j.push_back(diff::reshape(diff::sub(cur, x), {q, 1, 3}));
  }
  return diff::concat(per_j, 1);
}

MultiFlowMotion::MultiFlowMotion(diff::ParamStore& ps, const MotionConfig& cfg,
                                 Rng& rng)
    : cfg_(cfg) {
  int64_t in = motion_input_dim(cfg);
  l0_ = diff::Linear::create(ps, "motion.mlp.0", in, cfg.hidden, rng);
  l1_ = diff::Linear::create(ps, "motion.mlp.1", cfg.hidden, cfg.hidden, rng);
  // One 3-vector per window offset: -r..-1, +1..+r.
  l2_ = diff::Linear::create(ps, "motion.mlp.2", cfg.hidden, 6 * cfg.window,
                             rng, /*zero_init=*/true);
}

Tensor MultiFlowMotion::displacements(const Tensor& x, int i,
                                      const std::vector<int>& js) {
  check_frame(i, cfg_.num_frames);
  int64_t q = x.dim(0);
  Tensor h = diff::softplus(l0_.apply(motion_input(x, i, cfg_)));
  h = diff::softplus(l1_.apply(h));
  Tensor flows = l2_.apply(h);  // [Q, 6r]
  std::vector<Tensor> per_j;
  for (int j : js) {
    check_frame(j, cfg_.num_frames);
    int off = j - i;
    if (off == 0) {
      per_j.push_back(Tensor::zeros({q, 1, 3}));
      continue;
    }
    if (std::abs(off) > cfg_.window)
      throw ConfigError("destination frame outside the motion window");
    // slot order: offsets -r..-1 then +1..+r
    int slot = off < 0 ? off + cfg_.window : cfg_.window + off - 1;
    per_j.push_back(
        diff::reshape(diff::slice(flows, 1, 3 * slot, 3), {q, 1, 3}));
  }
  return diff::concat(per_j, 1);
}

Tensor cycle_loss(MotionModel& model, const Tensor& x, int i, int j) {
  Tensor fwd = model.correspond(x, i, j);
  Tensor back = model.correspond(fwd, j, i);
  return diff::affine(diff::mean(diff::abs(diff::sub(back, x))), 3.0, 0.0);
}

Tensor smoothness_loss(MotionModel& model, const Tensor& x, int i,
                       int radius) {
  if (radius < 1) throw ConfigError("smoothness radius must be >= 1");
  int n = model.frames();
  auto clamp_frame = [&](int j) { return std::max(0, std::min(n - 1, j)); };
  // One displacement query covering every frame the stencil touches.
  std::vector<int> js;
  for (int j = i - radius; j <= i + radius; ++j) js.push_back(clamp_frame(j));
  Tensor d = model.displacements(x, i, js);  // [Q, 2r+1, 3]
  int64_t terms = 2 * radius - 1;
  Tensor prev = diff::slice(d, 1, 0, terms);
  Tensor mid = diff::slice(d, 1, 1, terms);
  Tensor next = diff::slice(d, 1, 2, terms);
  Tensor second = diff::add(diff::sub(prev, diff::affine(mid, 2.0, 0.0)), next);
  return diff::affine(diff::mean(diff::abs(second)), 3.0, 0.0);
}

}  // namespace dynkit

#include "dynkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dynkit/common.hpp"
#include "dynkit/render.hpp"

namespace dynkit {

using diff::Tensor;

namespace {

Tensor const_vec(const std::vector<double>& v) {
  return Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v));
}

Tensor flat(const Tensor& t) {
  return t.ndim() == 1 ? t : diff::reshape(t, {-1});
}

void check_rows(const Tensor& t, size_t rows, int cols, const char* what) {
  if (t.ndim() != 2 || t.dim(0) != static_cast<int64_t>(rows) ||
      t.dim(1) != cols)
    throw ShapeError(std::string(what) + ": bad shape");
}

}  // namespace

Tensor charbonnier(const Tensor& residual, double alpha, double eps) {
  if (residual.ndim() != 2)
    throw ShapeError("charbonnier: residual must be [rows, dims]");
  Tensor e2 = diff::sum(diff::mul(residual, residual), 1);
  return diff::pow(diff::affine(e2, 1.0, eps * eps), alpha);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

WeightedSum color_term(const Tensor& rendered,
                       const std::vector<double>& target,
                       const std::vector<double>& value_weight,
                       const std::vector<double>& include) {
  size_t r = include.size();
  check_rows(rendered, r, 3, "color_term");
  if (target.size() != r * 3 || value_weight.size() != r)
    throw ShapeError("color_term: target or weight size mismatch");
  Tensor res = diff::sub(rendered, Tensor({static_cast<int64_t>(r), 3},
                                          std::vector<double>(target)));
  Tensor rho = charbonnier(res);
  std::vector<double> w(r);
  double count = 0;
  for (size_t k = 0; k < r; ++k) {
    w[k] = include[k] != 0 ? value_weight[k] : 0.0;
    if (include[k] != 0) count += 1;
  }
  return {diff::sum(diff::mul(rho, const_vec(w))), count};
}

WeightedSum depth_term(const Tensor& rendered_depth, const Tensor& alpha,
                       const std::vector<double>& prior,
                       std::vector<double> include, double alpha_min) {
  size_t r = include.size();
  check_rows(rendered_depth, r, 1, "depth_term");
  check_rows(alpha, r, 1, "depth_term");
  if (prior.size() != r) throw ShapeError("depth_term: prior size mismatch");
  const auto& a = alpha.data();
  const auto& d = rendered_depth.data();
  std::vector<double> ratios;
  for (size_t k = 0; k < r; ++k) {
    if (a[k] < alpha_min || d[k] <= 1e-8) include[k] = 0;
    if (include[k] != 0) ratios.push_back(prior[k] / d[k]);
  }
  if (ratios.empty()) return {Tensor({1}, {0.0}), 0};
  double s = median(std::move(ratios));
  Tensor resid = diff::abs(diff::sub(diff::affine(flat(rendered_depth), s, 0.0),
                                     const_vec(prior)));
  double count = 0;
  for (double v : include) count += v != 0 ? 1 : 0;
  return {diff::sum(diff::mul(resid, const_vec(include))), count};
}

WeightedSum flow_term(const Tensor& induced_uv,
                      const std::vector<double>& base_uv,
                      const std::vector<double>& prior_uv,
                      const std::vector<double>& include) {
  size_t r = include.size();
  check_rows(induced_uv, r, 2, "flow_term");
  if (base_uv.size() != r * 2 || prior_uv.size() != r * 2)
    throw ShapeError("flow_term: base or prior size mismatch");
  std::vector<double> target(r * 2);
  for (size_t k = 0; k < r * 2; ++k) target[k] = base_uv[k] + prior_uv[k];
  Tensor res = diff::abs(diff::sub(
      induced_uv, Tensor({static_cast<int64_t>(r), 2}, std::move(target))));
  Tensor per_ray = diff::sum(res, 1);
  double count = 0;
  for (double v : include) count += v != 0 ? 1 : 0;
  return {diff::sum(diff::mul(per_ray, const_vec(include))), count};
}

WeightedSum entropy_term(const Tensor& sigma_st, const Tensor& sigma_dy,
                         const Tensor& depths, double t_far, double gate) {
  if (sigma_st.shape() != sigma_dy.shape() ||
      sigma_st.shape() != depths.shape())
    throw ShapeError("entropy_term: sigma and depth shapes must match");
  Tensor dt = interval_lengths(depths, t_far);
  Tensor total = diff::add(sigma_st, sigma_dy);
  const auto& tv = total.data();
  const auto& dv = dt.data();
  std::vector<double> g(tv.size());
  double count = 0;
  for (size_t k = 0; k < tv.size(); ++k) {
    g[k] = tv[k] * dv[k] > gate ? 1.0 : 0.0;
    count += g[k];
  }
  Tensor p = diff::div(sigma_dy, diff::affine(total, 1.0, 1e-8));
  Tensor q = diff::affine(p, -1.0, 1.0);
  Tensor ent = diff::affine(
      diff::add(diff::mul(p, diff::log(diff::clamp_min(p, 1e-12))),
                diff::mul(q, diff::log(diff::clamp_min(q, 1e-12)))),
      -1.0, 0.0);
  Tensor gt = Tensor(total.shape(), std::move(g));
  return {diff::sum(diff::mul(ent, gt)), count};
}

WeightedSum distortion_from_midpoints(const Tensor& weights,
                                      const Tensor& s_mid,
                                      const Tensor& widths) {
  if (weights.ndim() != 2 || s_mid.shape() != weights.shape() ||
      widths.shape() != weights.shape())
    throw ShapeError("distortion: weights, midpoints, widths must be [R,S]");
  int64_t r = weights.dim(0), s = weights.dim(1);
  const auto& sm = s_mid.data();
  std::vector<double> gaps(static_cast<size_t>(r * s * s));
  for (int64_t a = 0; a < r; ++a)
    for (int64_t k = 0; k < s; ++k)
      for (int64_t m = 0; m < s; ++m)
        gaps[(a * s + k) * s + m] = std::abs(sm[a * s + k] - sm[a * s + m]);
  Tensor gap_t = Tensor({r, s, s}, std::move(gaps));
  Tensor w3 = diff::reshape(weights, {r, 1, s});
  Tensor pair = diff::matmul(diff::matmul(w3, gap_t), w3, false, true);
  Tensor self = diff::affine(
      diff::sum(diff::mul(diff::mul(weights, weights), widths), 1), 1.0 / 3.0,
      0.0);
  Tensor per_ray = diff::add(diff::reshape(pair, {r}), self);
  return {diff::sum(per_ray), static_cast<double>(r)};
}

WeightedSum distortion_term(const Tensor& weights, const Tensor& depths,
                            double t_near, double t_far) {
  Tensor dt = interval_lengths(depths, t_far);
  double span = t_far - t_near;
  if (!(span > 0)) throw ConfigError("distortion: t_far must exceed t_near");
  int64_t r = depths.dim(0), s = depths.dim(1);
  const auto& d = depths.data();
  const auto& w = dt.data();
  std::vector<double> mids(static_cast<size_t>(r * s));
  std::vector<double> widths(static_cast<size_t>(r * s));
  for (int64_t k = 0; k < r * s; ++k) {
    mids[k] = (d[k] + 0.5 * w[k] - t_near) / span;
    widths[k] = w[k] / span;
  }
  return distortion_from_midpoints(weights, Tensor({r, s}, std::move(mids)),
                                   Tensor({r, s}, std::move(widths)));
}

WeightedSum cauchy_term(const Tensor& composite,
                        const std::vector<double>& target, const Tensor& beta,
                        const std::vector<double>& include) {
  size_t r = include.size();
  check_rows(composite, r, 3, "cauchy_term");
  check_rows(beta, r, 1, "cauchy_term");
  if (target.size() != r * 3) throw ShapeError("cauchy_term: target mismatch");
  Tensor res = diff::sub(composite, Tensor({static_cast<int64_t>(r), 3},
                                           std::vector<double>(target)));
  Tensor e2 = diff::sum(diff::mul(res, res), 1);
  Tensor b = flat(beta);
  Tensor ll = diff::log(diff::add(b, diff::div(e2, b)));
  double count = 0;
  for (double v : include) count += v != 0 ? 1 : 0;
  return {diff::sum(diff::mul(ll, const_vec(include))), count};
}

double LossWeights::mask_dy_at(int step) const {
  if (mask_decay_interval <= 0) return mask_dy;
  double v = mask_dy;
  for (int s = mask_decay_interval; s <= step; s += mask_decay_interval)
    v /= mask_decay_factor;
  return v;
}

void LossAccumulator::add(const std::string& name, const WeightedSum& part,
                          double lambda) {
  auto it = parts_.find(name);
  if (it == parts_.end()) {
    parts_[name] = {part.sum, part.count, lambda};
  } else {
    it->second.sum = diff::add(it->second.sum, part.sum);
    it->second.count += part.count;
    it->second.lambda = lambda;
  }
}

void LossAccumulator::add_scalar(const std::string& name, const Tensor& value,
                                 double lambda) {
  add(name, {value, 1.0}, lambda);
}

Tensor LossAccumulator::total() {
  breakdown_.clear();
  Tensor acc;
  for (auto& [name, part] : parts_) {
    double denom = std::max(part.count, 1.0);
    double primal = part.sum.data()[0] * part.lambda / denom;
    if (!std::isfinite(primal))
      throw NumericError("non-finite loss component '" + name + "'");
    Tensor v = diff::affine(part.sum, part.lambda / denom, 0.0);
    breakdown_[name] = primal;
    acc = acc.defined() ? diff::add(acc, v) : v;
  }
  if (!acc.defined()) acc = Tensor({1}, {0.0});
  return acc;
}

}  // namespace dynkit

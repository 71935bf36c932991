#include "dynkit/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "dynkit/common.hpp"

namespace dynkit {

using diff::Tensor;

std::vector<int> select_source_views(int i, int radius, int num_frames,
                                     bool exclude_self) {
  if (num_frames < 1) throw ConfigError("select_source_views: empty sequence");
  if (i < 0 || i >= num_frames)
    throw ConfigError("select_source_views: frame index out of range");
  if (radius < 0) throw ConfigError("select_source_views: negative radius");
  int lo = std::max(0, i - radius);
  int hi = std::min(num_frames - 1, i + radius);
  std::vector<int> out;
  for (int j = lo; j <= hi; ++j)
    if (!(exclude_self && j == i)) out.push_back(j);
  return out;
}

FeatureExtractor FeatureExtractor::create(diff::ParamStore& ps, Rng& rng,
                                          const std::string& prefix) {
  FeatureExtractor fe;
  int64_t fan_in = 9 * 3, fan_out = 9 * kChannels;
  fe.w = ps.create(prefix + ".w", {3, 3, 3, kChannels},
                   diff::xavier_uniform(fan_in, fan_out, 9 * 3 * kChannels,
                                        rng));
  fe.b = ps.create(prefix + ".b", {kChannels},
                   std::vector<double>(kChannels, 0.0));
  return fe;
}

Tensor FeatureExtractor::apply(const Tensor& image) const {
  return diff::conv3x3_reflect(image, w, b);
}

Tensor sample_view(const Frame& frame, const Tensor& features,
                   const Tensor& pts, std::vector<uint8_t>* valid_out) {
  std::vector<uint8_t> in_front;
  Tensor uv = project_points(frame.cam, pts, &in_front);
  std::vector<uint8_t> ok;
  Tensor rgb = diff::bilinear_sample(frame.image, uv, in_front, &ok);
  Tensor feat = diff::bilinear_sample(features, uv, in_front, nullptr);
  if (valid_out) *valid_out = ok;
  return diff::concat({rgb, feat}, 1);
}

PoolParams PoolParams::create(diff::ParamStore& ps, const std::string& prefix,
                              Rng& rng) {
  PoolParams p;
  p.map = diff::Linear::create(ps, prefix + ".map", 11, kMapped, rng);
  p.logit = diff::Linear::create(ps, prefix + ".logit", kMapped, 1, rng);
  return p;
}

Tensor PoolParams::apply(const Tensor& samples, const Tensor& mask) const {
  int64_t q = samples.shape()[0], k = samples.shape()[1];
  Tensor m = diff::relu(map.apply(samples));            // [Q,K,32]
  Tensor lg = logit.apply(m);                           // [Q,K,1]
  // Invalid views get a -1e9 logit; their softmax weight underflows to 0.
  Tensor masked = diff::add(diff::mul(lg, mask), diff::affine(mask, 1e9, -1e9));
  Tensor w = diff::softmax_last(diff::reshape(masked, {q, k}));
  // Re-masking zeroes the uniform weights softmax yields on all-invalid rows.
  Tensor wm = diff::mul(diff::reshape(w, {q, k, 1}), mask);
  Tensor mu = diff::sum(diff::mul(m, wm), 1, true);     // [Q,1,32]
  Tensor var = diff::sum(diff::mul(diff::pow(diff::sub(m, mu), 2.0), wm), 1);
  return diff::concat({diff::reshape(mu, {q, kMapped}), var}, 1);
}

RayTransformer RayTransformer::create(diff::ParamStore& ps,
                                      const std::string& prefix,
                                      int64_t in_dim, int64_t head_extra,
                                      Rng& rng) {
  RayTransformer rt;
  rt.proj = diff::Linear::create(ps, prefix + ".proj", in_dim, kDim, rng);
  for (int b = 0; b < 2; ++b) {
    std::string bp = prefix + ".b" + std::to_string(b);
    Block& blk = rt.blocks[b];
    blk.ln1_g = ps.create(bp + ".ln1.g", {kDim}, std::vector<double>(kDim, 1));
    blk.ln1_b = ps.create(bp + ".ln1.b", {kDim}, std::vector<double>(kDim, 0));
    blk.wq = diff::Linear::create(ps, bp + ".q", kDim, kDim, rng);
    blk.wk = diff::Linear::create(ps, bp + ".k", kDim, kDim, rng);
    blk.wv = diff::Linear::create(ps, bp + ".v", kDim, kDim, rng);
    blk.wo = diff::Linear::create(ps, bp + ".o", kDim, kDim, rng);
    blk.ln2_g = ps.create(bp + ".ln2.g", {kDim}, std::vector<double>(kDim, 1));
    blk.ln2_b = ps.create(bp + ".ln2.b", {kDim}, std::vector<double>(kDim, 0));
    blk.ff1 = diff::Linear::create(ps, bp + ".ff1", kDim, 2 * kDim, rng);
    blk.ff2 = diff::Linear::create(ps, bp + ".ff2", 2 * kDim, kDim, rng);
  }
  rt.lnf_g = ps.create(prefix + ".lnf.g", {kDim}, std::vector<double>(kDim, 1));
  rt.lnf_b = ps.create(prefix + ".lnf.b", {kDim}, std::vector<double>(kDim, 0));
  rt.head_c =
      diff::Linear::create(ps, prefix + ".head_c", kDim + head_extra, 3, rng);
  rt.head_s =
      diff::Linear::create(ps, prefix + ".head_s", kDim + head_extra, 1, rng);
  return rt;
}

std::pair<Tensor, Tensor> RayTransformer::apply(const Tensor& x,
                                                const Tensor& post) const {
  if (x.shape().size() != 3)
    throw ShapeError("ray transformer expects [rays, samples, features]");
  int64_t r = x.shape()[0], s = x.shape()[1];
  constexpr int64_t dh = kDim / kHeads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto split_heads = [&](const Tensor& t) {
    return diff::transpose(diff::reshape(t, {r, s, kHeads, dh}), 1, 2);
  };

  Tensor h = proj.apply(x);
  for (const Block& blk : blocks) {
    Tensor hn = diff::layernorm_last(h, blk.ln1_g, blk.ln1_b);
    Tensor qh = split_heads(blk.wq.apply(hn));
    Tensor kh = split_heads(blk.wk.apply(hn));
    Tensor vh = split_heads(blk.wv.apply(hn));
    Tensor att = diff::softmax_last(
        diff::affine(diff::matmul(qh, kh, false, true), scale, 0.0));
    Tensor ctx = diff::reshape(diff::transpose(diff::matmul(att, vh), 1, 2),
                               {r, s, kDim});
    h = diff::add(h, blk.wo.apply(ctx));
    Tensor hn2 = diff::layernorm_last(h, blk.ln2_g, blk.ln2_b);
    h = diff::add(h, blk.ff2.apply(diff::relu(blk.ff1.apply(hn2))));
  }
  h = diff::layernorm_last(h, lnf_g, lnf_b);
  if (post.defined()) h = diff::concat({h, post}, 2);
  Tensor color = diff::sigmoid(head_c.apply(h));
  Tensor sigma = diff::reshape(diff::softplus(head_s.apply(h)), {r, s});
  return {color, sigma};
}

}  // namespace dynkit

#pragma once

#include <map>
#include <utility>
#include <vector>

#include "dynkit/geometry.hpp"
#include "dynkit/nn.hpp"

namespace dynkit {

// Temporal window of source frames around i, clamped to [0, N).
// exclude_self drops frame i itself (training-time rule for direct renders).
std::vector<int> select_source_views(int i, int radius, int num_frames,
                                     bool exclude_self = false);

// One learnable 3x3 convolution, 3 -> 8 channels, reflect borders.
struct FeatureExtractor {
  diff::Tensor w;  // [3,3,3,8]
  diff::Tensor b;  // [8]
  static constexpr int kChannels = 8;

  static FeatureExtractor create(diff::ParamStore& ps, Rng& rng,
                                 const std::string& prefix = "agg.conv");
  diff::Tensor apply(const diff::Tensor& image) const;  // [H,W,3] -> [H,W,8]
};

// A video frame available as a rendering source.
struct Frame {
  Camera cam;
  diff::Tensor image;  // [H,W,3], constant
};

// Project points into a frame and bilinearly sample color + features.
// pts [Q,3] -> [Q, 11]; valid_out marks rows inside the frustum and frame.
diff::Tensor sample_view(const Frame& frame, const diff::Tensor& features,
                         const diff::Tensor& pts,
                         std::vector<uint8_t>* valid_out);

// Weighted-average pooling over views: a shared per-view MLP, a scalar
// logit head, masked softmax weights, then weighted mean and variance.
struct PoolParams {
  diff::Linear map;    // 11 -> 32
  diff::Linear logit;  // 32 -> 1
  static constexpr int kMapped = 32;
  static constexpr int kOut = 64;  // mean ++ variance

  static PoolParams create(diff::ParamStore& ps, const std::string& prefix,
                           Rng& rng);
  // samples [Q,K,11], mask [Q,K,1] of 0/1 -> pooled [Q,64].
  // Samples with no valid view pool to exactly zero.
  diff::Tensor apply(const diff::Tensor& samples,
                     const diff::Tensor& mask) const;
};

// Self-attention over the sample axis of a ray; pre-LN blocks with
// residuals, then sigmoid color and softplus density heads. `head_extra`
// dims are concatenated after the attention stack, before the heads.
struct RayTransformer {
  static constexpr int kDim = 32;
  static constexpr int kHeads = 2;

  struct Block {
    diff::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    diff::Linear wq, wk, wv, wo, ff1, ff2;
  };

  diff::Linear proj;  // in_dim -> 32
  Block blocks[2];
  diff::Tensor lnf_g, lnf_b;
  diff::Linear head_c, head_s;

  static RayTransformer create(diff::ParamStore& ps, const std::string& prefix,
                               int64_t in_dim, int64_t head_extra, Rng& rng);
  // x [R,S,in_dim]; post [R,S,head_extra] or undefined when head_extra==0.
  // Returns color [R,S,3] in [0,1] and density [R,S] >= 0.
  std::pair<diff::Tensor, diff::Tensor> apply(const diff::Tensor& x,
                                              const diff::Tensor& post) const;
};

}  // namespace dynkit

#pragma once

#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "dynkit/aggregation.hpp"
#include "dynkit/image.hpp"
#include "dynkit/motion.hpp"

namespace dynkit {

// Per-ray outputs of compositing samples along rays.
struct RenderBundle {
  diff::Tensor color;    // [R,3]
  diff::Tensor weights;  // [R,S] interval masses
  diff::Tensor alpha;    // [R,1] accumulated opacity
  diff::Tensor depth;    // [R,1] opacity-weighted expected depth
};

// Interval lengths [R,S] between successive sample depths, the last one
// running to t_far. Throws DataError unless depths are strictly ascending
// and end before t_far. Constant (no gradient).
diff::Tensor interval_lengths(const diff::Tensor& depths, double t_far);

// Composites samples front to back. depths [R,S] must be strictly
// ascending per ray and end before t_far; the last interval extends to
// t_far. Residual transmittance is filled with the background color.
// depths are treated as constants.
RenderBundle volume_render(const diff::Tensor& color,   // [R,S,3]
                           const diff::Tensor& sigma,   // [R,S]
                           const diff::Tensor& depths,  // [R,S]
                           double t_far, const Vec3& background);

// Composites two fields under one transmittance computed from the summed
// densities. Reduces exactly to volume_render of the surviving field when
// the other field's density is identically zero. weights are the total
// interval masses.
RenderBundle combine_fields(const diff::Tensor& c_static,
                            const diff::Tensor& s_static,
                            const diff::Tensor& c_dynamic,
                            const diff::Tensor& s_dynamic,
                            const diff::Tensor& depths, double t_far,
                            const Vec3& background);

// Per-ray confidence that two renders saw the same matter:
// clamp(1 - sum_k |wa_k - wb_k|, 0, 1), computed from primal values so no
// gradient flows through it. Returns a constant [R,1] tensor.
diff::Tensor occlusion_weights(const diff::Tensor& wa, const diff::Tensor& wb);

// Sampled per-ray field values plus a per-ray flag telling whether any
// sample landed inside any source view.
struct StaticFieldResult {
  diff::Tensor color;  // [R,S,3]
  diff::Tensor sigma;  // [R,S]
  std::vector<uint8_t> any_valid;  // per ray
};

// The time-independent image-based rendering pipeline, shared verbatim by
// the main static branch and the segmentation bootstrap: gather source
// pixels and features at the sample points x [R*S,3], pool across views
// ks with masked attention, then decode along each ray with the
// transformer conditioned on target/mean-source ray coordinates, the
// spatial embedding, and the normalized depth.
StaticFieldResult static_ibr_field(
    const PoolParams& pool, const RayTransformer& rt, int posenc_spatial,
    const std::vector<Frame>& frames,
    const std::function<diff::Tensor(int)>& features,
    const std::vector<int>& ks, const diff::Tensor& x,
    const std::vector<Ray>& rays, const diff::Tensor& norm_depth);

struct RenderConfig {
  int samples = 24;
  double t_near = 0.5;
  double t_far = 6.0;
  int window = 3;  // temporal source-view radius
  Vec3 background{0, 0, 0};
  bool train_mode = true;  // training-time source-view exclusions
  bool jitter = true;      // jitter sample depths within strata
  // Dynamic-only ablation: the static field is replaced by zero densities,
  // so the full render reduces exactly to the dynamic model alone.
  bool use_static = true;
  // Disables the shortcut that skips the first trajectory query when the
  // render time equals the target time (used to test path equivalence).
  bool force_requery = false;
};

// All learnable pieces of the renderer. The feature extractor is shared;
// the static and dynamic branches have separate pooling and transformers.
// The embedding widths are architecture constants fixed at creation.
struct SceneModels {
  FeatureExtractor conv;
  PoolParams pool_static, pool_dynamic;
  RayTransformer rt_static, rt_dynamic;
  MotionModel* motion = nullptr;
  int posenc_spatial = 4;  // spatial embedding for the ray transformer
  int posenc_time = 8;     // time embedding, matches the motion model

  static SceneModels create(diff::ParamStore& ps, const MotionConfig& mc,
                            MotionModel* motion, Rng& rng,
                            int posenc_spatial = 4);
};

// Everything the losses need from one batch of rays rendered at target
// time i through the motion field at time j.
struct CrossTimeResult {
  RenderBundle full, dyn, stat;
  diff::Tensor what;           // [R,1] occlusion confidence, constant
  diff::Tensor points;         // [R,S,3] straight-ray samples, constant
  diff::Tensor warped;         // [R,S,3] motion-adjusted sample positions
  diff::Tensor sigma_static;   // [R,S]
  diff::Tensor sigma_dynamic;  // [R,S]
  diff::Tensor depths;         // [R,S] constant
  std::vector<uint8_t> resolvable;  // per ray
};

// Images rendered for evaluation or export.
struct ImageRender {
  Image color;      // composited
  Image depth;      // expected depth, 1 channel
  Image dyn_color;  // dynamic field alone
  Image stat_color; // static field alone
  Image dyn_alpha;  // dynamic accumulated opacity, 1 channel
};

class SceneRenderer {
 public:
  SceneRenderer(SceneModels models, std::vector<Frame> frames,
                RenderConfig cfg);

  // Recomputes feature maps for these frames on the current tape and drops
  // all others (stale maps would silently detach the extractor).
  void refresh_features(const std::vector<int>& frame_ids);

  // Renders rays of target time i as seen through the motion at time j
  // (j == i is the direct render; both share this code path). rng drives
  // depth jitter and may be null.
  CrossTimeResult render_rays(const std::vector<Ray>& rays, int i, int j,
                              Rng* rng);

  // Renders between frames i and i+1 at fraction f in (0,1): samples are
  // displaced along the two trajectory directions, rendered at each
  // endpoint time, and the composited colors are blended linearly.
  RenderBundle render_between(const std::vector<Ray>& rays, int i, double f,
                              Rng* rng);

  // Full-frame render at a novel camera, forward only, inference rules
  // (no view exclusion, no jitter).
  ImageRender render_image(const Camera& cam, int time, int chunk = 2048);

  RenderConfig& config() { return cfg_; }
  const std::vector<Frame>& frames() const { return frames_; }
  SceneModels& models() { return models_; }

 private:
  struct FieldOut {
    diff::Tensor color;   // [R,S,3]
    diff::Tensor sigma;   // [R,S]
    std::vector<uint8_t> any_valid;  // per ray
  };

  diff::Tensor frame_features(int id);
  // Gathers, pools, and runs the dynamic transformer for samples already
  // displaced to time tau's coordinate frame.
  FieldOut dynamic_field(const diff::Tensor& x_tau, int tau, int64_t rays,
                         const diff::Tensor& norm_depth, bool exclude_self);
  FieldOut static_field(const diff::Tensor& x, const std::vector<Ray>& rays,
                        int i, const diff::Tensor& norm_depth);
  diff::Tensor sample_depths(size_t rays, Rng* rng) const;

  SceneModels models_;
  std::vector<Frame> frames_;
  RenderConfig cfg_;
  std::map<int, diff::Tensor> features_;
};

}  // namespace dynkit

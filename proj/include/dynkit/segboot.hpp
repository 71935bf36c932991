#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dynkit/losses.hpp"
#include "dynkit/render.hpp"
#include "dynkit/scenes.hpp"

namespace dynkit {

// Binary-mask morphology with a square structuring element of side
// 2*radius+1. Pixels outside the image are neutral (background for
// dilation, foreground for erosion), so opening stays inside the mask and
// closing contains it even at borders. Inputs/outputs are 0/1 single
// channel images.
Image erode_mask(const Image& m, int radius);
Image dilate_mask(const Image& m, int radius);

// Intersection over union of two 0/1 masks; 1.0 when both are empty.
double mask_iou(const Image& a, const Image& b);

// Per-pixel heads of the 2D dynamic-image model.
struct DynamicMaps {
  diff::Tensor alpha;  // [H,W,1] in (0,1)
  diff::Tensor beta;   // [H,W,1] >= 1e-3
  diff::Tensor color;  // [H,W,3] in (0,1)
};

// Convolutional encoder-decoder without skip connections: two 2x
// downsamplings (16 then 32 channels), a bottleneck, and bilinear
// upsampling back to full resolution. Predicts a dynamic RGBA explanation
// of a single frame plus a per-pixel uncertainty scale. The alpha head
// starts biased towards transparent.
class DynamicImageModel {
 public:
  DynamicImageModel(diff::ParamStore& ps, Rng& rng,
                    const std::string& prefix = "boot2d");

  // image [H,W,3] with H and W divisible by 4.
  DynamicMaps apply(const diff::Tensor& image) const;

 private:
  diff::Conv3 enc0_, enc1_, mid_, dec0_, dec1_;
  diff::Conv3 head_alpha_, head_beta_, head_color_;
};

struct BootConfig {
  int steps = 1500;
  int rays_per_step = 384;
  int samples = 16;
  int window = 3;
  double lr = 5e-4;
  double clip = 1.0;
  double threshold = 0.5;   // alpha cut for masks
  int erode_radius = 2;     // at 64 wide; scales with resolution
  int dilate_radius = 4;
  int posenc_spatial = 4;
  uint64_t seed = 1;
  int log_every = 50;
};

// Factor-and-segment stage: a lightweight static image-based renderer
// (time-independent, separate parameters) trained jointly with the 2D
// dynamic-image model under a heavy-tailed composite reconstruction
// likelihood. Whatever the static model cannot explain is absorbed by the
// 2D model's alpha, which thresholded gives the motion masks.
class Bootstrap {
 public:
  Bootstrap(const SceneDataset& ds, BootConfig cfg);

  // One optimization step: a ray batch for the static model and one
  // full-frame pass of the 2D model on the same frame, composited under
  // the Cauchy likelihood. Returns the step loss.
  double step();
  int steps_done() const { return step_; }

  // 2D model outputs for one frame (forward only, no tape).
  DynamicMaps maps(int i);
  // Thresholded alpha map of one frame (forward only, no tape).
  Image mask(int i);
  std::vector<Image> masks();

  // Reconstruction quality of each side on a 0/1 region of frame i,
  // forward only. Static renders through the IBR branch at the region's
  // pixels; dynamic reads the 2D model's color head.
  double static_psnr(int i, const Image& region, int max_pixels = 512);
  double dynamic_psnr(int i, const Image& region);

  diff::ParamStore& params() { return ps_; }
  double learning_rate() const { return cfg_.lr; }

 private:
  RenderBundle render_static(const std::vector<Ray>& rays, int i,
                             bool exclude_self, bool jitter,
                             std::vector<uint8_t>* resolvable);

  const SceneDataset& ds_;
  BootConfig cfg_;
  diff::ParamStore ps_;
  Rng rng_;
  FeatureExtractor conv_;
  PoolParams pool_;
  RayTransformer rt_;
  std::unique_ptr<DynamicImageModel> model2d_;
  std::unique_ptr<diff::Adam> opt_;
  std::vector<Frame> frames_;
  std::map<int, diff::Tensor> features_;  // per-step cache
  int step_ = 0;
};

struct BootRunResult {
  std::vector<Image> masks;        // raw thresholded, 0/1
  std::vector<double> iou;         // vs GT masks when present
  std::vector<std::string> log;    // JSONL lines
  double final_loss = 0;
};

// Runs the bootstrap to completion and thresholds the masks. GT masks in
// the dataset are only used for reporting IoU, never for training.
BootRunResult run_bootstrap(const SceneDataset& ds, const BootConfig& cfg);

}  // namespace dynkit

#pragma once

#include <string>
#include <vector>

#include "dynkit/geometry.hpp"
#include "dynkit/image.hpp"

namespace dynkit {

// One moving primitive. Positions are pure functions of the normalized
// clip time u = frame / (n_frames - 1).
struct MoverSpec {
  std::string shape = "sphere";  // sphere | box
  std::string path = "linear";   // linear | sinusoid | circular
  Vec3 base{0, 0, 0};            // trajectory anchor
  Vec3 span{0, 0, 0};            // linear: total travel; sinusoid: amplitude
  double orbit = 0.0;            // circular: radius in the xz plane
  double cycles = 1.0;           // oscillations/revolutions over the clip
  double radius = 0.3;           // sphere radius or box half-extent
  Vec3 color{0.9, 0.4, 0.2};
};

struct SceneSpec {
  int n_frames = 24;
  int width = 64, height = 48;
  std::string camera_path = "sway";  // sway | orbit | static
  double camera_amplitude = 0.5;     // sway travel or orbit arc (radians)
  double camera_radius = 2.5;
  Vec3 background{0.4, 0.45, 0.55};  // wall tint under the noise texture
  std::vector<MoverSpec> movers;
};

// Built-in specs: "default" (one orbiting sphere), "zero" (no movers),
// "two" (sphere + box on curved paths). Throws ConfigError otherwise.
SceneSpec scene_preset(const std::string& name);

// Everything the pipeline consumes. Flow images are 3-channel (du, dv,
// valid); masks are single-channel 0/1.
struct SceneDataset {
  int n = 0, width = 0, height = 0;
  std::vector<Camera> cams, heldout_cams;
  std::vector<Image> images, heldout_images;
  std::vector<Image> depth, heldout_depth;
  std::vector<Image> flow_fwd, flow_bwd;
  std::vector<Image> masks_gt, heldout_masks;
  std::vector<Image> boot_masks;  // filled by load_dataset when masks/ exists
  Vec3 background{};
  double t_near = 0.5, t_far = 7.0;
};

// Analytic ray-traced rendering of the spec: value-noise textured room,
// emissive movers, exact depth / flow / masks, plus one held-out camera
// per frame. Pure in (spec, seed).
SceneDataset generate_scene(const SceneSpec& spec, uint64_t seed);

// Mover center at frame index i (exposed for ground-truth tests).
Vec3 mover_center(const MoverSpec& m, int i, int n_frames);

// Seeded value noise in [0,1), trilinear over an integer lattice.
double value_noise(const Vec3& p, uint64_t seed);

void save_dataset(const SceneDataset& ds, const std::string& dir);
SceneDataset load_dataset(const std::string& dir);

// Writes bootstrap masks (0/1 single channel) under <dir>/masks/.
void save_boot_masks(const std::vector<Image>& masks, const std::string& dir);

}  // namespace dynkit

#include "dynkit/segboot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dynkit/common.hpp"
#include "dynkit/metrics.hpp"

namespace dynkit {

using diff::Tensor;

namespace {

Image morph(const Image& m, int radius, bool dilate) {
  if (m.channels != 1) throw ShapeError("morphology expects a 1-channel mask");
  if (radius <= 0) return m;
  Image out = Image::create(m.width, m.height, 1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool acc = !dilate;
      for (int dy = -radius; dy <= radius && acc != dilate; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          int yy = y + dy, xx = x + dx;
          bool inside = yy >= 0 && yy < m.height && xx >= 0 && xx < m.width;
          // Neutral padding: outside pixels never veto erosion and never
          // seed dilation, so opening/closing containments hold at borders.
          bool v = inside ? m.at(yy, xx, 0) > 0.5f : !dilate;
          if (dilate && v) {
            acc = true;
            break;
          }
          if (!dilate && !v) {
            acc = false;
            break;
          }
        }
      out.at(y, x, 0) = acc ? 1.f : 0.f;
    }
  return out;
}

Tensor image_tensor(const Image& im) {
  std::vector<double> v(im.pixels.begin(), im.pixels.end());
  return Tensor({im.height, im.width, im.channels}, std::move(v));
}

// Gathers a [H,W,C] map at integer pixel positions (exact bilinear hit).
Tensor gather_pixels(const Tensor& map, const std::vector<double>& uv) {
  int64_t r = static_cast<int64_t>(uv.size() / 2);
  std::vector<uint8_t> valid(static_cast<size_t>(r), 1);
  return diff::bilinear_sample(map, Tensor({r, 2}, std::vector<double>(uv)),
                               valid);
}

}  // namespace

Image erode_mask(const Image& m, int radius) { return morph(m, radius, false); }
Image dilate_mask(const Image& m, int radius) { return morph(m, radius, true); }

double mask_iou(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != 1 ||
      b.channels != 1)
    throw ShapeError("mask_iou expects equal-size 1-channel masks");
  double inter = 0, uni = 0;
  for (size_t k = 0; k < a.pixels.size(); ++k) {
    bool va = a.pixels[k] > 0.5f, vb = b.pixels[k] > 0.5f;
    inter += va && vb ? 1 : 0;
    uni += va || vb ? 1 : 0;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

DynamicImageModel::DynamicImageModel(diff::ParamStore& ps, Rng& rng,
                                     const std::string& prefix)
    : enc0_(diff::Conv3::create(ps, prefix + ".enc0", 3, 16, rng)),
      enc1_(diff::Conv3::create(ps, prefix + ".enc1", 16, 32, rng)),
      mid_(diff::Conv3::create(ps, prefix + ".mid", 32, 32, rng)),
      dec0_(diff::Conv3::create(ps, prefix + ".dec0", 32, 16, rng)),
      dec1_(diff::Conv3::create(ps, prefix + ".dec1", 16, 16, rng)),
      head_alpha_(diff::Conv3::create(ps, prefix + ".alpha", 16, 1, rng, -1.5)),
      head_beta_(diff::Conv3::create(ps, prefix + ".beta", 16, 1, rng)),
      head_color_(diff::Conv3::create(ps, prefix + ".color", 16, 3, rng)) {}

DynamicMaps DynamicImageModel::apply(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(2) != 3)
    throw ShapeError("dynamic image model expects [H,W,3]");
  if (image.dim(0) % 4 != 0 || image.dim(1) % 4 != 0)
    throw ShapeError("dynamic image model needs H and W divisible by 4");
  Tensor h = diff::relu(enc0_.apply(image));
  h = diff::avgpool2(h);
  h = diff::relu(enc1_.apply(h));
  h = diff::avgpool2(h);
  h = diff::relu(mid_.apply(h));
  h = diff::upsample_bilinear2x(h);
  h = diff::relu(dec0_.apply(h));
  h = diff::upsample_bilinear2x(h);
  h = diff::relu(dec1_.apply(h));
  DynamicMaps out;
  out.alpha = diff::sigmoid(head_alpha_.apply(h));
  out.beta = diff::affine(diff::softplus(head_beta_.apply(h)), 1.0, 1e-3);
  out.color = diff::sigmoid(head_color_.apply(h));
  return out;
}

Bootstrap::Bootstrap(const SceneDataset& ds, BootConfig cfg)
    : ds_(ds), cfg_(cfg), rng_(cfg.seed) {
  if (ds.n < 2) throw DataError("bootstrap needs at least 2 frames");
  conv_ = FeatureExtractor::create(ps_, rng_, "boot.conv");
  pool_ = PoolParams::create(ps_, "boot.pool", rng_);
  int pe = 3 * (1 + 2 * cfg_.posenc_spatial);
  rt_ = RayTransformer::create(ps_, "boot.rt", 64 + 6 + 6 + pe + 1, 0, rng_);
  model2d_ = std::make_unique<DynamicImageModel>(ps_, rng_);
  opt_ = std::make_unique<diff::Adam>(
      ps_, diff::AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.clip});
  for (int i = 0; i < ds.n; ++i)
    frames_.push_back({ds.cams[i], image_tensor(ds.images[i])});
}

RenderBundle Bootstrap::render_static(const std::vector<Ray>& rays, int i,
                                      bool exclude_self, bool jitter,
                                      std::vector<uint8_t>* resolvable) {
  size_t r = rays.size(), s = static_cast<size_t>(cfg_.samples);
  std::vector<double> depth_rows;
  depth_rows.reserve(r * s);
  std::vector<double> pts(r * s * 3);
  std::vector<double> nd(r * s);
  double span = ds_.t_far - ds_.t_near;
  for (size_t a = 0; a < r; ++a) {
    auto ts = stratified_samples(ds_.t_near, ds_.t_far, cfg_.samples, jitter,
                                 jitter ? &rng_ : nullptr);
    for (size_t k = 0; k < s; ++k) {
      double t = ts[k];
      depth_rows.push_back(t);
      Vec3 p = rays[a].origin + rays[a].dir * t;
      size_t q = a * s + k;
      pts[3 * q] = p.x;
      pts[3 * q + 1] = p.y;
      pts[3 * q + 2] = p.z;
      nd[q] = (t - ds_.t_near) / span;
    }
  }
  Tensor depths({static_cast<int64_t>(r), static_cast<int64_t>(s)},
                std::move(depth_rows));
  Tensor x({static_cast<int64_t>(r * s), 3}, std::move(pts));
  Tensor ndt({static_cast<int64_t>(r * s), 1}, std::move(nd));
  auto ks = select_source_views(i, cfg_.window, ds_.n, exclude_self);
  StaticFieldResult f = static_ibr_field(
      pool_, rt_, cfg_.posenc_spatial, frames_,
      [this](int id) {
        auto it = features_.find(id);
        if (it != features_.end()) return it->second;
        Tensor feat = conv_.apply(frames_[static_cast<size_t>(id)].image);
        features_[id] = feat;
        return feat;
      },
      ks, x, rays, ndt);
  if (resolvable) *resolvable = f.any_valid;
  return volume_render(f.color, f.sigma, depths, ds_.t_far, ds_.background);
}

double Bootstrap::step() {
  features_.clear();
  diff::Tape tape;
  int i = static_cast<int>(rng_.uniform_int(static_cast<uint64_t>(ds_.n)));
  size_t r = static_cast<size_t>(cfg_.rays_per_step);
  std::vector<Ray> rays;
  std::vector<double> uv;
  std::vector<double> gt;
  rays.reserve(r);
  for (size_t a = 0; a < r; ++a) {
    int x = static_cast<int>(rng_.uniform_int(ds_.width));
    int y = static_cast<int>(rng_.uniform_int(ds_.height));
    rays.push_back(ray_through_pixel(ds_.cams[i], x, y));
    uv.push_back(x);
    uv.push_back(y);
    for (int c = 0; c < 3; ++c) gt.push_back(ds_.images[i].at(y, x, c));
  }

  std::vector<uint8_t> resolvable;
  RenderBundle st = render_static(rays, i, true, true, &resolvable);
  DynamicMaps maps = model2d_->apply(frames_[static_cast<size_t>(i)].image);
  Tensor a = gather_pixels(maps.alpha, uv);
  Tensor beta = gather_pixels(maps.beta, uv);
  Tensor cdy = gather_pixels(maps.color, uv);
  Tensor composite =
      diff::add(diff::mul(a, cdy), diff::mul(diff::affine(a, -1.0, 1.0), st.color));

  std::vector<double> include(r);
  for (size_t k = 0; k < r; ++k) include[k] = resolvable[k] ? 1.0 : 0.0;
  WeightedSum ws = cauchy_term(composite, gt, beta, include);
  Tensor loss = diff::affine(ws.sum, 1.0 / std::max(ws.count, 1.0), 0.0);
  double primal = loss.data()[0];
  if (!std::isfinite(primal)) throw NumericError("bootstrap loss non-finite");
  tape.backward(loss);
  opt_->step();
  ps_.zero_grads();
  ++step_;
  return primal;
}

DynamicMaps Bootstrap::maps(int i) {
  diff::NoTape guard;
  return model2d_->apply(frames_[static_cast<size_t>(i)].image);
}

Image Bootstrap::mask(int i) {
  diff::NoTape guard;
  DynamicMaps maps = model2d_->apply(frames_[static_cast<size_t>(i)].image);
  Image out = Image::create(ds_.width, ds_.height, 1);
  const auto& av = maps.alpha.data();
  for (int y = 0; y < ds_.height; ++y)
    for (int x = 0; x < ds_.width; ++x)
      out.at(y, x, 0) =
          av[static_cast<size_t>(y) * ds_.width + x] > cfg_.threshold ? 1.f : 0.f;
  return out;
}

std::vector<Image> Bootstrap::masks() {
  std::vector<Image> out;
  for (int i = 0; i < ds_.n; ++i) out.push_back(mask(i));
  return out;
}

double Bootstrap::static_psnr(int i, const Image& region, int max_pixels) {
  diff::NoTape guard;
  features_.clear();
  std::vector<std::pair<int, int>> px;
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x)
      if (region.at(y, x, 0) > 0.5f) px.emplace_back(x, y);
  if (px.empty()) return 99.0;
  size_t stride = std::max<size_t>(1, px.size() / static_cast<size_t>(max_pixels));
  std::vector<Ray> rays;
  std::vector<std::pair<int, int>> used;
  for (size_t k = 0; k < px.size(); k += stride) {
    rays.push_back(ray_through_pixel(ds_.cams[i], px[k].first, px[k].second));
    used.push_back(px[k]);
  }
  std::vector<uint8_t> resolvable;
  RenderBundle st = render_static(rays, i, true, false, &resolvable);
  const auto& cv = st.color.data();
  double mse = 0;
  int cnt = 0;
  for (size_t k = 0; k < used.size(); ++k) {
    if (!resolvable[k]) continue;
    for (int c = 0; c < 3; ++c) {
      double d = cv[3 * k + c] - ds_.images[i].at(used[k].second, used[k].first, c);
      mse += d * d;
    }
    ++cnt;
  }
  if (cnt == 0) return 0.0;
  mse /= 3 * cnt;
  return mse <= 0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double Bootstrap::dynamic_psnr(int i, const Image& region) {
  diff::NoTape guard;
  DynamicMaps maps = model2d_->apply(frames_[static_cast<size_t>(i)].image);
  const auto& cv = maps.color.data();
  double mse = 0;
  int cnt = 0;
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x) {
      if (region.at(y, x, 0) <= 0.5f) continue;
      for (int c = 0; c < 3; ++c) {
        double d = cv[(static_cast<size_t>(y) * ds_.width + x) * 3 + c] -
                   ds_.images[i].at(y, x, c);
        mse += d * d;
      }
      ++cnt;
    }
  if (cnt == 0) return 99.0;
  mse /= 3 * cnt;
  return mse <= 0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

BootRunResult run_bootstrap(const SceneDataset& ds, const BootConfig& cfg) {
  Bootstrap boot(ds, cfg);
  BootRunResult out;
  double loss = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    loss = boot.step();
    if (cfg.log_every > 0 && (s % cfg.log_every == 0 || s + 1 == cfg.steps)) {
      std::ostringstream line;
      line << "{\"step\":" << s << ",\"loss_seg\":" << loss << "}";
      out.log.push_back(line.str());
    }
  }
  out.final_loss = loss;
  out.masks = boot.masks();
  if (!ds.masks_gt.empty()) {
    for (int i = 0; i < ds.n; ++i)
      out.iou.push_back(mask_iou(out.masks[static_cast<size_t>(i)],
                                 ds.masks_gt[static_cast<size_t>(i)]));
  }
  return out;
}

}  // namespace dynkit

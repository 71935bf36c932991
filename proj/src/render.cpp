#include "dynkit/render.hpp"

#include <algorithm>
#include <cmath>

#include "dynkit/common.hpp"

namespace dynkit {

using diff::Tensor;

// Interval lengths with the last one running to t_far. Depths must be
// strictly ascending and end before t_far.
Tensor interval_lengths(const Tensor& depths, double t_far) {
  int64_t r = depths.shape()[0], s = depths.shape()[1];
  std::vector<double> dt(static_cast<size_t>(r * s));
  const auto& d = depths.data();
  for (int64_t a = 0; a < r; ++a) {
    for (int64_t k = 0; k < s; ++k) {
      double t0 = d[a * s + k];
      double t1 = (k + 1 < s) ? d[a * s + k + 1] : t_far;
      if (!(t1 > t0))
        throw DataError("volume_render: sample depths must be strictly "
                        "ascending and end before t_far");
      dt[a * s + k] = t1 - t0;
    }
  }
  return Tensor({r, s}, std::move(dt));
}

namespace {

void check_field_shapes(const Tensor& color, const Tensor& sigma,
                        const Tensor& depths) {
  if (color.ndim() != 3 || color.dim(2) != 3)
    throw ShapeError("volume_render: color must be [rays, samples, 3]");
  if (sigma.shape() != diff::Shape{color.dim(0), color.dim(1)})
    throw ShapeError("volume_render: sigma must be [rays, samples]");
  if (depths.shape() != sigma.shape())
    throw ShapeError("volume_render: depths must match sigma");
}

Tensor background_row(const Vec3& bg) {
  return Tensor({1, 3}, {bg.x, bg.y, bg.z});
}

// Opacity-weighted depth with a floor on the accumulated mass.
Tensor expected_depth(const Tensor& weights, const Tensor& depths,
                      const Tensor& alpha) {
  int64_t r = weights.shape()[0];
  Tensor wd = diff::reshape(diff::sum(diff::mul(weights, depths), 1), {r, 1});
  return diff::div(wd, diff::clamp_min(alpha, 1e-8));
}

}  // namespace

RenderBundle volume_render(const Tensor& color, const Tensor& sigma,
                           const Tensor& depths, double t_far,
                           const Vec3& background) {
  check_field_shapes(color, sigma, depths);
  int64_t r = sigma.shape()[0], s = sigma.shape()[1];
  Tensor dt = interval_lengths(depths, t_far);
  Tensor sd = diff::mul(sigma, dt);
  Tensor alpha = diff::affine(diff::exp(diff::affine(sd, -1.0, 0.0)), -1.0, 1.0);
  Tensor trans =
      diff::exp(diff::affine(diff::cumsum_last(sd, true), -1.0, 0.0));
  Tensor w = diff::mul(trans, alpha);

  Tensor w3 = diff::reshape(w, {r, s, 1});
  Tensor t_end = diff::exp(
      diff::affine(diff::reshape(diff::sum(sd, 1), {r, 1}), -1.0, 0.0));
  RenderBundle out;
  out.weights = w;
  out.color = diff::add(diff::sum(diff::mul(w3, color), 1),
                        diff::mul(t_end, background_row(background)));
  out.alpha = diff::reshape(diff::sum(w, 1), {r, 1});
  out.depth = expected_depth(w, depths, out.alpha);
  return out;
}

RenderBundle combine_fields(const Tensor& c_static, const Tensor& s_static,
                            const Tensor& c_dynamic, const Tensor& s_dynamic,
                            const Tensor& depths, double t_far,
                            const Vec3& background) {
  check_field_shapes(c_static, s_static, depths);
  check_field_shapes(c_dynamic, s_dynamic, depths);
  int64_t r = s_static.shape()[0], s = s_static.shape()[1];
  Tensor dt = interval_lengths(depths, t_far);
  Tensor sd_sum = diff::mul(diff::add(s_static, s_dynamic), dt);
  Tensor trans =
      diff::exp(diff::affine(diff::cumsum_last(sd_sum, true), -1.0, 0.0));

  auto field_mass = [&](const Tensor& sig) {
    Tensor a = diff::affine(
        diff::exp(diff::affine(diff::mul(sig, dt), -1.0, 0.0)), -1.0, 1.0);
    return diff::mul(trans, a);
  };
  Tensor w_st = field_mass(s_static);
  Tensor w_dy = field_mass(s_dynamic);
  Tensor w_tot = diff::mul(
      trans, diff::affine(diff::exp(diff::affine(sd_sum, -1.0, 0.0)), -1.0,
                          1.0));

  Tensor t_end = diff::exp(
      diff::affine(diff::reshape(diff::sum(sd_sum, 1), {r, 1}), -1.0, 0.0));
  RenderBundle out;
  out.weights = w_tot;
  out.color = diff::add(
      diff::add(diff::sum(diff::mul(diff::reshape(w_st, {r, s, 1}), c_static), 1),
                diff::sum(diff::mul(diff::reshape(w_dy, {r, s, 1}), c_dynamic), 1)),
      diff::mul(t_end, background_row(background)));
  out.alpha = diff::reshape(diff::sum(w_tot, 1), {r, 1});
  out.depth = expected_depth(w_tot, depths, out.alpha);
  return out;
}

Tensor occlusion_weights(const Tensor& wa, const Tensor& wb) {
  if (wa.shape() != wb.shape() || wa.ndim() != 2)
    throw ShapeError("occlusion_weights: mismatched weight shapes");
  int64_t r = wa.shape()[0], s = wa.shape()[1];
  std::vector<double> out(static_cast<size_t>(r));
  for (int64_t a = 0; a < r; ++a) {
    double d = 0;
    for (int64_t k = 0; k < s; ++k)
      d += std::abs(wa[a * s + k] - wb[a * s + k]);
    out[a] = std::clamp(1.0 - d, 0.0, 1.0);
  }
  return Tensor({r, 1}, std::move(out));
}

SceneModels SceneModels::create(diff::ParamStore& ps, const MotionConfig& mc,
                                MotionModel* motion, Rng& rng,
                                int posenc_spatial) {
  SceneModels m;
  m.conv = FeatureExtractor::create(ps, rng);
  m.pool_static = PoolParams::create(ps, "agg.pool.st", rng);
  m.pool_dynamic = PoolParams::create(ps, "agg.pool.dy", rng);
  m.posenc_spatial = posenc_spatial;
  m.posenc_time = mc.posenc_time;
  int64_t pe = 3 * (1 + 2 * posenc_spatial);
  int64_t te = 1 + 2 * mc.posenc_time;
  m.rt_static = RayTransformer::create(
      ps, "agg.rt.st", PoolParams::kOut + 6 + 6 + pe + 1, 0, rng);
  m.rt_dynamic =
      RayTransformer::create(ps, "agg.rt.dy", PoolParams::kOut + te + 1, pe, rng);
  m.motion = motion;
  return m;
}

SceneRenderer::SceneRenderer(SceneModels models, std::vector<Frame> frames,
                             RenderConfig cfg)
    : models_(std::move(models)), frames_(std::move(frames)), cfg_(cfg) {
  if (frames_.empty()) throw ConfigError("renderer needs at least one frame");
  if (!models_.motion) throw ConfigError("renderer needs a motion model");
  if (models_.motion->frames() != static_cast<int>(frames_.size()))
    throw ConfigError("motion model frame count does not match frames");
  if (cfg_.samples < 2) throw ConfigError("renderer needs at least 2 samples");
}

void SceneRenderer::refresh_features(const std::vector<int>& frame_ids) {
  features_.clear();
  for (int id : frame_ids)
    features_[id] = models_.conv.apply(frames_.at(id).image);
}

Tensor SceneRenderer::frame_features(int id) {
  auto it = features_.find(id);
  if (it != features_.end()) return it->second;
  Tensor f = models_.conv.apply(frames_.at(static_cast<size_t>(id)).image);
  features_[id] = f;
  return f;
}

Tensor SceneRenderer::sample_depths(size_t rays, Rng* rng) const {
  int s = cfg_.samples;
  bool jitter = cfg_.jitter && rng != nullptr;
  std::vector<double> d;
  d.reserve(rays * static_cast<size_t>(s));
  for (size_t a = 0; a < rays; ++a) {
    auto row = stratified_samples(cfg_.t_near, cfg_.t_far, s, jitter, rng);
    d.insert(d.end(), row.begin(), row.end());
  }
  return Tensor({static_cast<int64_t>(rays), s}, std::move(d));
}

SceneRenderer::FieldOut SceneRenderer::dynamic_field(
    const Tensor& x_tau, int tau, int64_t rays, const Tensor& norm_depth,
    bool exclude_self) {
  int n = static_cast<int>(frames_.size());
  auto ks = select_source_views(tau, cfg_.window, n, exclude_self);
  if (ks.empty())
    throw ConfigError("dynamic field has no source views at frame " +
                      std::to_string(tau));
  int64_t q = x_tau.shape()[0];
  int64_t kn = static_cast<int64_t>(ks.size());
  Tensor warped = models_.motion->correspond_window(x_tau, tau, ks);

  std::vector<Tensor> per_view;
  std::vector<double> maskv(static_cast<size_t>(q * kn), 0.0);
  std::vector<uint8_t> sample_any(static_cast<size_t>(q), 0);
  for (int64_t k = 0; k < kn; ++k) {
    Tensor pts = diff::reshape(diff::slice(warped, 1, k, 1), {q, 3});
    std::vector<uint8_t> valid;
    Tensor sv = sample_view(frames_[static_cast<size_t>(ks[k])],
                            frame_features(ks[k]), pts, &valid);
    per_view.push_back(diff::reshape(sv, {q, 1, 11}));
    for (int64_t p = 0; p < q; ++p) {
      maskv[static_cast<size_t>(p * kn + k)] = valid[static_cast<size_t>(p)];
      sample_any[static_cast<size_t>(p)] |= valid[static_cast<size_t>(p)];
    }
  }
  Tensor samples = diff::concat(per_view, 1);
  Tensor mask({q, kn, 1}, std::move(maskv));
  Tensor pooled = models_.pool_dynamic.apply(samples, mask);

  auto te = time_embedding(tau, n, models_.posenc_time);
  Tensor temb = diff::broadcast_to(
      Tensor({1, static_cast<int64_t>(te.size())}, te),
      {q, static_cast<int64_t>(te.size())});
  Tensor rt_in = diff::concat({pooled, temb, norm_depth}, 1);
  int64_t s = q / rays;
  Tensor post = diff::reshape(posenc_t(x_tau, models_.posenc_spatial),
                              {rays, s, 3 * (1 + 2 * models_.posenc_spatial)});
  auto [c, sg] = models_.rt_dynamic.apply(
      diff::reshape(rt_in, {rays, s, rt_in.dim(1)}), post);

  FieldOut out;
  out.color = c;
  out.sigma = sg;
  out.any_valid.assign(static_cast<size_t>(rays), 0);
  for (int64_t p = 0; p < q; ++p)
    out.any_valid[static_cast<size_t>(p / s)] |= sample_any[static_cast<size_t>(p)];
  return out;
}

StaticFieldResult static_ibr_field(
    const PoolParams& pool, const RayTransformer& rt, int posenc_spatial,
    const std::vector<Frame>& frames,
    const std::function<Tensor(int)>& features, const std::vector<int>& ks,
    const Tensor& x, const std::vector<Ray>& rays, const Tensor& norm_depth) {
  if (ks.empty()) throw ConfigError("static field has no source views");
  int64_t q = x.shape()[0];
  int64_t kn = static_cast<int64_t>(ks.size());
  int64_t r = static_cast<int64_t>(rays.size());
  int64_t s = q / r;

  std::vector<Tensor> per_view;
  std::vector<double> maskv(static_cast<size_t>(q * kn), 0.0);
  std::vector<uint8_t> valid_flat(static_cast<size_t>(q * kn), 0);
  std::vector<uint8_t> sample_any(static_cast<size_t>(q), 0);
  for (int64_t k = 0; k < kn; ++k) {
    std::vector<uint8_t> valid;
    Tensor sv = sample_view(frames[static_cast<size_t>(ks[k])],
                            features(ks[k]), x, &valid);
    per_view.push_back(diff::reshape(sv, {q, 1, 11}));
    for (int64_t p = 0; p < q; ++p) {
      maskv[static_cast<size_t>(p * kn + k)] = valid[static_cast<size_t>(p)];
      valid_flat[static_cast<size_t>(p * kn + k)] = valid[static_cast<size_t>(p)];
      sample_any[static_cast<size_t>(p)] |= valid[static_cast<size_t>(p)];
    }
  }
  Tensor samples = diff::concat(per_view, 1);
  Tensor mask({q, kn, 1}, std::move(maskv));
  Tensor pooled = pool.apply(samples, mask);

  // Ray coordinates: the target ray's line, and the mean line from the
  // valid source cameras through each sample point.
  std::vector<double> plt(static_cast<size_t>(q * 6), 0.0);
  for (int64_t a = 0; a < r; ++a) {
    auto pl = pluecker(rays[static_cast<size_t>(a)]);
    for (int64_t k = 0; k < s; ++k)
      for (int c = 0; c < 6; ++c)
        plt[static_cast<size_t>(((a * s + k) * 6) + c)] = pl[static_cast<size_t>(c)];
  }
  std::vector<double> pls(static_cast<size_t>(q * 6), 0.0);
  const auto& xv = x.data();
  for (int64_t p = 0; p < q; ++p) {
    Vec3 pt{xv[static_cast<size_t>(3 * p)], xv[static_cast<size_t>(3 * p + 1)],
            xv[static_cast<size_t>(3 * p + 2)]};
    int cnt = 0;
    double acc[6] = {0, 0, 0, 0, 0, 0};
    for (int64_t k = 0; k < kn; ++k) {
      if (!valid_flat[static_cast<size_t>(p * kn + k)]) continue;
      Vec3 c0 = frames[static_cast<size_t>(ks[k])].cam.center();
      Vec3 dir = pt - c0;
      double nrm = dir.norm();
      if (nrm < 1e-12) continue;
      auto pl = pluecker(Ray{c0, dir * (1.0 / nrm)});
      for (int c = 0; c < 6; ++c) acc[c] += pl[static_cast<size_t>(c)];
      ++cnt;
    }
    if (cnt > 0)
      for (int c = 0; c < 6; ++c)
        pls[static_cast<size_t>(p * 6 + c)] = acc[c] / cnt;
  }

  Tensor pe = posenc_t(x, posenc_spatial);
  Tensor rt_in = diff::concat({pooled, Tensor({q, 6}, std::move(plt)),
                               Tensor({q, 6}, std::move(pls)), pe, norm_depth},
                              1);
  auto [c, sg] = rt.apply(diff::reshape(rt_in, {r, s, rt_in.dim(1)}), Tensor());

  StaticFieldResult out;
  out.color = c;
  out.sigma = sg;
  out.any_valid.assign(static_cast<size_t>(r), 0);
  for (int64_t p = 0; p < q; ++p)
    out.any_valid[static_cast<size_t>(p / s)] |= sample_any[static_cast<size_t>(p)];
  return out;
}

SceneRenderer::FieldOut SceneRenderer::static_field(
    const Tensor& x, const std::vector<Ray>& rays, int i,
    const Tensor& norm_depth) {
  if (!cfg_.use_static) {
    // Zero density contributes nothing to the combined integral, so the
    // render degenerates to the dynamic field alone.
    int64_t r = static_cast<int64_t>(rays.size());
    int64_t s = x.dim(0) / r;
    return {Tensor::full({r, s, 3}, 0.0), Tensor::full({r, s}, 0.0),
            std::vector<uint8_t>(static_cast<size_t>(r), 0)};
  }
  int n = static_cast<int>(frames_.size());
  auto ks = select_source_views(i, cfg_.window, n, cfg_.train_mode);
  if (ks.empty())
    throw ConfigError("static field has no source views at frame " +
                      std::to_string(i));
  StaticFieldResult res = static_ibr_field(
      models_.pool_static, models_.rt_static, models_.posenc_spatial, frames_,
      [this](int id) { return frame_features(id); }, ks, x, rays, norm_depth);
  return {res.color, res.sigma, std::move(res.any_valid)};
}

CrossTimeResult SceneRenderer::render_rays(const std::vector<Ray>& rays, int i,
                                           int j, Rng* rng) {
  int n = static_cast<int>(frames_.size());
  if (i < 0 || i >= n || j < 0 || j >= n)
    throw ConfigError("render_rays: frame index out of range");
  if (std::abs(i - j) > cfg_.window)
    throw ConfigError("render_rays: render time outside the source window");
  if (rays.empty()) throw ConfigError("render_rays: empty ray batch");

  int64_t r = static_cast<int64_t>(rays.size());
  int64_t s = cfg_.samples;
  int64_t q = r * s;
  Tensor depths = sample_depths(rays.size(), rng);
  const auto& dv = depths.data();
  std::vector<double> pts(static_cast<size_t>(q * 3));
  std::vector<double> ndv(static_cast<size_t>(q));
  for (int64_t a = 0; a < r; ++a) {
    const Ray& ray = rays[static_cast<size_t>(a)];
    for (int64_t k = 0; k < s; ++k) {
      double t = dv[static_cast<size_t>(a * s + k)];
      Vec3 p = ray.origin + t * ray.dir;
      size_t base = static_cast<size_t>((a * s + k) * 3);
      pts[base] = p.x;
      pts[base + 1] = p.y;
      pts[base + 2] = p.z;
      ndv[static_cast<size_t>(a * s + k)] =
          (t - cfg_.t_near) / (cfg_.t_far - cfg_.t_near);
    }
  }
  Tensor xf({q, 3}, std::move(pts));
  Tensor nd({q, 1}, std::move(ndv));

  // Bend the ray into frame j's coordinates. At j == i the displacement is
  // identically zero, so the query can be skipped without changing values.
  Tensor x_tau = xf;
  if (j != i || cfg_.force_requery) {
    Tensor d = models_.motion->displacements(xf, i, {j});
    x_tau = diff::add(xf, diff::reshape(d, {q, 3}));
  }

  bool exclude_direct = cfg_.train_mode && j == i;
  FieldOut dy = dynamic_field(x_tau, j, r, nd, exclude_direct);
  FieldOut st = static_field(xf, rays, i, nd);

  CrossTimeResult out;
  out.dyn = volume_render(dy.color, dy.sigma, depths, cfg_.t_far,
                          cfg_.background);
  out.stat = volume_render(st.color, st.sigma, depths, cfg_.t_far,
                           cfg_.background);
  out.full = combine_fields(st.color, st.sigma, dy.color, dy.sigma, depths,
                            cfg_.t_far, cfg_.background);
  out.points = diff::reshape(xf, {r, s, 3});
  out.warped = diff::reshape(x_tau, {r, s, 3});
  out.sigma_static = st.sigma;
  out.sigma_dynamic = dy.sigma;
  out.depths = depths;

  out.resolvable.assign(static_cast<size_t>(r), 0);
  for (int64_t a = 0; a < r; ++a)
    out.resolvable[static_cast<size_t>(a)] =
        dy.any_valid[static_cast<size_t>(a)] | st.any_valid[static_cast<size_t>(a)];

  if (j == i) {
    out.what = Tensor::full({r, 1}, 1.0);
  } else {
    // Compare against the detached direct render at time i; mismatched
    // opacity profiles mark disocclusions that should not be supervised.
    diff::NoTape guard;
    FieldOut di = dynamic_field(xf.detach(), i, r, nd.detach(),
                                cfg_.train_mode);
    RenderBundle bdi = volume_render(di.color, di.sigma, depths, cfg_.t_far,
                                     cfg_.background);
    out.what = occlusion_weights(bdi.weights, out.dyn.weights);
  }
  return out;
}

RenderBundle SceneRenderer::render_between(const std::vector<Ray>& rays, int i,
                                           double f, Rng* rng) {
  int n = static_cast<int>(frames_.size());
  if (i < 0 || i + 1 >= n)
    throw ConfigError("render_between: frame pair out of range");
  if (!(f > 0.0 && f < 1.0))
    throw ConfigError("render_between: fraction must lie strictly in (0,1)");

  int64_t r = static_cast<int64_t>(rays.size());
  int64_t s = cfg_.samples;
  int64_t q = r * s;
  Tensor depths = sample_depths(rays.size(), rng);
  const auto& dv = depths.data();
  std::vector<double> pts(static_cast<size_t>(q * 3));
  std::vector<double> ndv(static_cast<size_t>(q));
  for (int64_t a = 0; a < r; ++a) {
    const Ray& ray = rays[static_cast<size_t>(a)];
    for (int64_t k = 0; k < s; ++k) {
      double t = dv[static_cast<size_t>(a * s + k)];
      Vec3 p = ray.origin + t * ray.dir;
      size_t base = static_cast<size_t>((a * s + k) * 3);
      pts[base] = p.x;
      pts[base + 1] = p.y;
      pts[base + 2] = p.z;
      ndv[static_cast<size_t>(a * s + k)] =
          (t - cfg_.t_near) / (cfg_.t_far - cfg_.t_near);
    }
  }
  Tensor xf({q, 3}, std::move(pts));
  Tensor nd({q, 1}, std::move(ndv));

  Tensor da = diff::reshape(models_.motion->displacements(xf, i, {i + 1}),
                            {q, 3});
  Tensor db = diff::reshape(models_.motion->displacements(xf, i + 1, {i}),
                            {q, 3});
  Tensor xa = diff::add(xf, diff::affine(da, f, 0.0));
  Tensor xb = diff::add(xf, diff::affine(db, 1.0 - f, 0.0));

  FieldOut fa = dynamic_field(xa, i, r, nd, false);
  FieldOut fb = dynamic_field(xb, i + 1, r, nd, false);
  FieldOut st = static_field(xf, rays, i, nd);

  RenderBundle ba = combine_fields(st.color, st.sigma, fa.color, fa.sigma,
                                   depths, cfg_.t_far, cfg_.background);
  RenderBundle bb = combine_fields(st.color, st.sigma, fb.color, fb.sigma,
                                   depths, cfg_.t_far, cfg_.background);

  auto blend = [&](const Tensor& a, const Tensor& b) {
    return diff::add(diff::affine(a, 1.0 - f, 0.0), diff::affine(b, f, 0.0));
  };
  RenderBundle out;
  out.color = blend(ba.color, bb.color);
  out.weights = blend(ba.weights, bb.weights);
  out.alpha = blend(ba.alpha, bb.alpha);
  out.depth = blend(ba.depth, bb.depth);
  return out;
}

ImageRender SceneRenderer::render_image(const Camera& cam, int time,
                                        int chunk) {
  diff::NoTape guard;
  RenderConfig saved = cfg_;
  cfg_.train_mode = false;
  cfg_.jitter = false;
  ImageRender out;
  out.color = Image::create(cam.width, cam.height, 3);
  out.depth = Image::create(cam.width, cam.height, 1);
  out.dyn_color = Image::create(cam.width, cam.height, 3);
  out.stat_color = Image::create(cam.width, cam.height, 3);
  out.dyn_alpha = Image::create(cam.width, cam.height, 1);

  try {
    refresh_features(select_source_views(
        time, cfg_.window, static_cast<int>(frames_.size()), false));
    std::vector<Ray> rays;
    std::vector<std::pair<int, int>> px;
    rays.reserve(static_cast<size_t>(chunk));
    px.reserve(static_cast<size_t>(chunk));
    auto flush = [&]() {
      if (rays.empty()) return;
      CrossTimeResult res = render_rays(rays, time, time, nullptr);
      for (size_t a = 0; a < rays.size(); ++a) {
        auto [xpix, ypix] = px[a];
        bool ok = res.resolvable[a] != 0;
        for (int c = 0; c < 3; ++c) {
          double bgc = c == 0 ? cfg_.background.x
                              : (c == 1 ? cfg_.background.y : cfg_.background.z);
          out.color.at(ypix, xpix, c) = static_cast<float>(
              ok ? res.full.color[static_cast<int64_t>(a) * 3 + c] : bgc);
          out.dyn_color.at(ypix, xpix, c) = static_cast<float>(
              ok ? res.dyn.color[static_cast<int64_t>(a) * 3 + c] : bgc);
          out.stat_color.at(ypix, xpix, c) = static_cast<float>(
              ok ? res.stat.color[static_cast<int64_t>(a) * 3 + c] : bgc);
        }
        out.depth.at(ypix, xpix, 0) =
            static_cast<float>(res.full.depth[static_cast<int64_t>(a)]);
        out.dyn_alpha.at(ypix, xpix, 0) =
            static_cast<float>(res.dyn.alpha[static_cast<int64_t>(a)]);
      }
      rays.clear();
      px.clear();
    };
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        rays.push_back(ray_through_pixel(cam, x, y));
        px.emplace_back(x, y);
        if (static_cast<int>(rays.size()) >= chunk) flush();
      }
    }
    flush();
  } catch (...) {
    cfg_ = saved;
    throw;
  }
  cfg_ = saved;
  return out;
}

}  // namespace dynkit

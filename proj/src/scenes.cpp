#include "dynkit/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dynkit/common.hpp"
#include "json.hpp"

namespace dynkit {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRoomHalf = 2.8;  // interior wall distance from origin

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice(int64_t ix, int64_t iy, int64_t iz, uint64_t seed) {
  uint64_t h = seed;
  h = mix64(h ^ static_cast<uint64_t>(ix));
  h = mix64(h ^ static_cast<uint64_t>(iy));
  h = mix64(h ^ static_cast<uint64_t>(iz));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

Vec3 clamp01(const Vec3& c) {
  return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0),
          std::clamp(c.z, 0.0, 1.0)};
}

// Multi-octave wall texture around a per-channel tint.
Vec3 wall_color(const Vec3& p, const Vec3& tint, uint64_t seed) {
  Vec3 out;
  for (int c = 0; c < 3; ++c) {
    double n = 0.5 * value_noise(p * 0.9, seed + 11 * c) +
               0.33 * value_noise(p * 2.6 + Vec3{7.1, 3.3, 5.9}, seed + 113 * c + 7) +
               0.17 * value_noise(p * 7.3 + Vec3{1.7, 9.2, 4.4}, seed + 211 * c + 19);
    double v = tint[c] * (0.45 + 1.25 * n);
    (c == 0 ? out.x : c == 1 ? out.y : out.z) = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

struct Hit {
  bool ok = false;
  double t = 0;
  Vec3 point;
  Vec3 normal;
  int mover = -1;  // -1 means wall
};

// Exit point of a ray starting inside the axis-aligned room.
double room_exit(const Ray& r) {
  double t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double d = r.dir[a], o = r.origin[a];
    if (d > 1e-12)
      t = std::min(t, (kRoomHalf - o) / d);
    else if (d < -1e-12)
      t = std::min(t, (-kRoomHalf - o) / d);
  }
  return t;
}

bool hit_sphere(const Ray& r, const Vec3& c, double rad, double tmax, Hit* h) {
  Vec3 oc = r.origin - c;
  double b = oc.dot(r.dir);
  double q = oc.dot(oc) - rad * rad;
  double disc = b * b - q;
  if (disc < 0) return false;
  double s = std::sqrt(disc);
  double t = -b - s;
  if (t < 1e-6) t = -b + s;
  if (t < 1e-6 || t >= tmax) return false;
  h->ok = true;
  h->t = t;
  h->point = r.origin + r.dir * t;
  h->normal = (h->point - c).normalized();
  return true;
}

bool hit_box(const Ray& r, const Vec3& c, double half, double tmax, Hit* h) {
  double t0 = 1e-6, t1 = tmax;
  int axis0 = -1;
  for (int a = 0; a < 3; ++a) {
    double o = r.origin[a] - c[a], d = r.dir[a];
    if (std::abs(d) < 1e-12) {
      if (std::abs(o) > half) return false;
      continue;
    }
    double ta = (-half - o) / d, tb = (half - o) / d;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis0 < 0 || t0 >= tmax) return false;  // origin inside or too far
  h->ok = true;
  h->t = t0;
  h->point = r.origin + r.dir * t0;
  Vec3 n{0, 0, 0};
  double sign = (h->point[axis0] - c[axis0]) > 0 ? 1.0 : -1.0;
  (axis0 == 0 ? n.x : axis0 == 1 ? n.y : n.z) = sign;
  h->normal = n;
  return true;
}

Hit trace(const Ray& r, const std::vector<Vec3>& centers,
          const std::vector<MoverSpec>& movers) {
  Hit best;
  best.t = room_exit(r);
  best.ok = true;
  best.point = r.origin + r.dir * best.t;
  for (size_t k = 0; k < movers.size(); ++k) {
    Hit h;
    bool got = movers[k].shape == "box"
                   ? hit_box(r, centers[k], movers[k].radius, best.t, &h)
                   : hit_sphere(r, centers[k], movers[k].radius, best.t, &h);
    if (got) {
      best = h;
      best.mover = static_cast<int>(k);
    }
  }
  return best;
}

Vec3 shade(const Hit& h, const Ray& r, const SceneSpec& spec,
           const std::vector<Vec3>& centers, uint64_t seed) {
  if (h.mover < 0) return wall_color(h.point, spec.background, seed);
  const MoverSpec& m = spec.movers[h.mover];
  double limb = 0.55 + 0.45 * std::abs(h.normal.dot(r.dir));
  Vec3 local = h.point - centers[h.mover];
  double tex = 0.85 + 0.3 * value_noise(local * 5.0, seed + 777 + h.mover);
  return clamp01(m.color * (limb * tex));
}

Camera make_camera(int w, int h, const Vec3& eye) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = 30.0 * w / 64.0;
  cam.cx = (w - 1) / 2.0;
  cam.cy = (h - 1) / 2.0;
  cam.R = look_at(eye, {0, 0, 0});
  cam.t = eye;
  return cam;
}

Vec3 train_eye(const SceneSpec& spec, int i) {
  double u = spec.n_frames > 1 ? double(i) / (spec.n_frames - 1) : 0.0;
  double r = spec.camera_radius;
  if (spec.camera_path == "static") return {0.0, -0.25, -r};
  if (spec.camera_path == "orbit") {
    double phi = spec.camera_amplitude * (u - 0.5);
    return {r * std::sin(phi), -0.25, -r * std::cos(phi)};
  }
  if (spec.camera_path == "sway")
    return {spec.camera_amplitude * std::sin(2.0 * kPi * u), -0.25, -r};
  throw ConfigError("unknown camera path '" + spec.camera_path + "'");
}

double dist_to_unit_box(const Vec3& p) {
  Vec3 d{std::max(std::abs(p.x) - 1.0, 0.0), std::max(std::abs(p.y) - 1.0, 0.0),
         std::max(std::abs(p.z) - 1.0, 0.0)};
  return d.norm();
}

nlohmann::json camera_json(const Camera& c) {
  return {{"fx", c.fx},
          {"fy", c.fy},
          {"cx", c.cx},
          {"cy", c.cy},
          {"width", c.width},
          {"height", c.height},
          {"R", c.R.m},
          {"t", {c.t.x, c.t.y, c.t.z}}};
}

Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  auto r = j.at("R").get<std::vector<double>>();
  auto t = j.at("t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3)
    throw DataError("camera entry has malformed R or t");
  std::copy(r.begin(), r.end(), c.R.m.begin());
  c.t = {t[0], t[1], t[2]};
  return c;
}

std::string frame_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d.%s", i, ext);
  return buf;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("failed to parse " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

double value_noise(const Vec3& p, uint64_t seed) {
  double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
  auto ix = static_cast<int64_t>(fx);
  auto iy = static_cast<int64_t>(fy);
  auto iz = static_cast<int64_t>(fz);
  double tx = smooth(p.x - fx), ty = smooth(p.y - fy), tz = smooth(p.z - fz);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

Vec3 mover_center(const MoverSpec& m, int i, int n_frames) {
  double u = n_frames > 1 ? double(i) / (n_frames - 1) : 0.0;
  if (m.path == "linear") return m.base + m.span * (u - 0.5);
  if (m.path == "sinusoid")
    return m.base + m.span * std::sin(2.0 * kPi * m.cycles * u);
  if (m.path == "circular") {
    double a = 2.0 * kPi * m.cycles * u;
    return m.base + Vec3{m.orbit * std::cos(a), 0.0, m.orbit * std::sin(a)};
  }
  throw ConfigError("unknown mover path '" + m.path + "'");
}

SceneSpec scene_preset(const std::string& name) {
  SceneSpec s;
  if (name == "zero") return s;
  if (name == "default") {
    // Fast orbit: ~3 px/frame at 64 wide, so nearby views genuinely
    // disagree about the mover and motion handling has something to do.
    MoverSpec m;
    m.shape = "sphere";
    m.path = "circular";
    m.base = {0.0, 0.1, 0.0};
    m.orbit = 0.5;
    m.cycles = 1.75;
    m.radius = 0.33;
    m.color = {0.95, 0.45, 0.15};
    s.movers.push_back(m);
    return s;
  }
  if (name == "two") {
    MoverSpec a;
    a.shape = "sphere";
    a.path = "sinusoid";
    a.base = {-0.35, 0.05, -0.1};
    a.span = {0.3, -0.25, 0.15};
    a.cycles = 1.0;
    a.radius = 0.26;
    a.color = {0.2, 0.75, 0.95};
    MoverSpec b;
    b.shape = "box";
    b.path = "circular";
    b.base = {0.3, 0.35, 0.1};
    b.orbit = 0.4;
    b.cycles = 0.75;
    b.radius = 0.22;
    b.color = {0.9, 0.85, 0.25};
    s.movers = {a, b};
    return s;
  }
  throw ConfigError("unknown scene preset '" + name + "'");
}

SceneDataset generate_scene(const SceneSpec& spec, uint64_t seed) {
  if (spec.n_frames < 2) throw ConfigError("scene needs at least 2 frames");
  if (spec.width < 8 || spec.height < 8)
    throw ConfigError("scene resolution must be at least 8x8");
  const int n = spec.n_frames, w = spec.width, h = spec.height;

  // Mover centers per frame; movers must stay inside the unit scene box.
  std::vector<std::vector<Vec3>> centers(n);
  for (int i = 0; i < n; ++i) {
    centers[i].resize(spec.movers.size());
    for (size_t k = 0; k < spec.movers.size(); ++k) {
      Vec3 c = mover_center(spec.movers[k], i, n);
      centers[i][k] = c;
      double reach = std::max({std::abs(c.x), std::abs(c.y), std::abs(c.z)}) +
                     spec.movers[k].radius;
      if (reach > 1.0 + 1e-9)
        throw ConfigError("mover " + std::to_string(k) +
                          " leaves the scene box at frame " + std::to_string(i));
    }
  }

  SceneDataset ds;
  ds.n = n;
  ds.width = w;
  ds.height = h;
  ds.background = spec.background;
  for (int i = 0; i < n; ++i) {
    Vec3 eye = train_eye(spec, i);
    ds.cams.push_back(make_camera(w, h, eye));
    Vec3 heye = rot_y(10.0 * kPi / 180.0) * eye + Vec3{0, -0.15, 0};
    ds.heldout_cams.push_back(make_camera(w, h, heye));
  }

  // Sampling range: movers live in the unit box; walls cap the far end.
  double tn = std::numeric_limits<double>::infinity(), tf = 0;
  auto cover = [&](const Camera& c) {
    tn = std::min(tn, dist_to_unit_box(c.t));
    for (int cz = -1; cz <= 1; cz += 2)
      for (int cy = -1; cy <= 1; cy += 2)
        for (int cx = -1; cx <= 1; cx += 2)
          tf = std::max(tf, (Vec3{cx * kRoomHalf, cy * kRoomHalf,
                                  cz * kRoomHalf} -
                             c.t)
                                .norm());
  };
  for (const Camera& c : ds.cams) cover(c);
  for (const Camera& c : ds.heldout_cams) cover(c);
  ds.t_near = std::max(0.3, 0.85 * tn);
  ds.t_far = tf + 0.2;

  // Per-pixel hit records feed the exact flow below.
  std::vector<std::vector<Hit>> hits(n);
  auto render_view = [&](const Camera& cam, int i, Image* img, Image* dep,
                         Image* mask, std::vector<Hit>* rec) {
    *img = Image::create(w, h, 3);
    *dep = Image::create(w, h, 1);
    *mask = Image::create(w, h, 1);
    if (rec) rec->resize(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Ray r = ray_through_pixel(cam, x, y);
        Hit hit = trace(r, centers[i], spec.movers);
        Vec3 c = shade(hit, r, spec, centers[i], seed);
        img->at(y, x, 0) = static_cast<float>(c.x);
        img->at(y, x, 1) = static_cast<float>(c.y);
        img->at(y, x, 2) = static_cast<float>(c.z);
        dep->at(y, x, 0) = static_cast<float>(hit.t);
        mask->at(y, x, 0) = hit.mover >= 0 ? 1.f : 0.f;
        if (rec) (*rec)[static_cast<size_t>(y) * w + x] = hit;
      }
  };

  ds.images.resize(n);
  ds.depth.resize(n);
  ds.masks_gt.resize(n);
  ds.heldout_images.resize(n);
  ds.heldout_depth.resize(n);
  ds.heldout_masks.resize(n);
  for (int i = 0; i < n; ++i) {
    render_view(ds.cams[i], i, &ds.images[i], &ds.depth[i], &ds.masks_gt[i],
                &hits[i]);
    render_view(ds.heldout_cams[i], i, &ds.heldout_images[i],
                &ds.heldout_depth[i], &ds.heldout_masks[i], nullptr);
  }

  // Exact flow: move the hit point with its mover, project into the
  // neighboring frame's camera. Channel 2 flags usable entries.
  auto flow_to = [&](int i, int other) {
    Image f = Image::create(w, h, 3);
    if (other < 0 || other >= n) return f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Hit& hit = hits[i][static_cast<size_t>(y) * w + x];
        Vec3 p = hit.point;
        if (hit.mover >= 0)
          p = p + (centers[other][hit.mover] - centers[i][hit.mover]);
        Projection pr = project_point(ds.cams[other], p);
        bool valid = pr.in_front && pr.u >= 0 && pr.u <= w - 1 && pr.v >= 0 &&
                     pr.v <= h - 1;
        f.at(y, x, 0) = static_cast<float>(pr.u - x);
        f.at(y, x, 1) = static_cast<float>(pr.v - y);
        f.at(y, x, 2) = valid ? 1.f : 0.f;
      }
    return f;
  };
  for (int i = 0; i < n; ++i) {
    ds.flow_fwd.push_back(flow_to(i, i + 1));
    ds.flow_bwd.push_back(flow_to(i, i - 1));
  }
  return ds;
}

void save_dataset(const SceneDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const char* sub : {"images", "heldout", "depth", "depth_heldout",
                          "flow_fwd", "flow_bwd", "masks_gt", "masks_heldout"})
    fs::create_directories(fs::path(dir) / sub);

  nlohmann::json manifest = {
      {"n_frames", ds.n},
      {"width", ds.width},
      {"height", ds.height},
      {"background", {ds.background.x, ds.background.y, ds.background.z}},
      {"scene_box", {-1.0, -1.0, -1.0, 1.0, 1.0, 1.0}},
      {"t_near", ds.t_near},
      {"t_far", ds.t_far},
      {"heldout_cameras", true}};
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(2) << "\n";

  nlohmann::json cams = {{"train", nlohmann::json::array()},
                         {"heldout", nlohmann::json::array()}};
  for (const Camera& c : ds.cams) cams["train"].push_back(camera_json(c));
  for (const Camera& c : ds.heldout_cams)
    cams["heldout"].push_back(camera_json(c));
  std::ofstream(fs::path(dir) / "cameras.json") << cams.dump(2) << "\n";

  auto p = [&](const char* sub, int i, const char* ext) {
    return (fs::path(dir) / sub / frame_name(i, ext)).string();
  };
  for (int i = 0; i < ds.n; ++i) {
    write_png(p("images", i, "png"), ds.images[i]);
    write_png(p("heldout", i, "png"), ds.heldout_images[i]);
    write_pfm(p("depth", i, "pfm"), ds.depth[i]);
    write_pfm(p("depth_heldout", i, "pfm"), ds.heldout_depth[i]);
    write_pfm(p("flow_fwd", i, "pfm"), ds.flow_fwd[i]);
    write_pfm(p("flow_bwd", i, "pfm"), ds.flow_bwd[i]);
    write_png(p("masks_gt", i, "png"), ds.masks_gt[i]);
    write_png(p("masks_heldout", i, "png"), ds.heldout_masks[i]);
  }
}

SceneDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  nlohmann::json manifest = read_json_file((fs::path(dir) / "manifest.json").string());
  SceneDataset ds;
  ds.n = manifest.at("n_frames").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.height = manifest.at("height").get<int>();
  auto bg = manifest.at("background").get<std::vector<double>>();
  if (bg.size() != 3) throw DataError("manifest background must have 3 entries");
  ds.background = {bg[0], bg[1], bg[2]};
  ds.t_near = manifest.at("t_near").get<double>();
  ds.t_far = manifest.at("t_far").get<double>();
  if (ds.n < 2) throw DataError("manifest n_frames must be at least 2");

  nlohmann::json cams = read_json_file((fs::path(dir) / "cameras.json").string());
  for (const auto& j : cams.at("train")) ds.cams.push_back(camera_from_json(j));
  for (const auto& j : cams.at("heldout"))
    ds.heldout_cams.push_back(camera_from_json(j));
  if (static_cast<int>(ds.cams.size()) != ds.n ||
      static_cast<int>(ds.heldout_cams.size()) != ds.n)
    throw DataError("cameras.json frame count does not match manifest n_frames");

  auto p = [&](const char* sub, int i, const char* ext) {
    return (fs::path(dir) / sub / frame_name(i, ext)).string();
  };
  auto load_seq = [&](const char* sub, const char* ext, int channels,
                      std::vector<Image>* out) {
    for (int i = 0; i < ds.n; ++i) {
      std::string path = p(sub, i, ext);
      if (!fs::exists(path)) throw DataError("missing file: " + path);
      Image im = std::string(ext) == "png" ? read_png(path) : read_pfm(path);
      if (im.width != ds.width || im.height != ds.height ||
          im.channels != channels)
        throw DataError("unexpected image shape in " + path);
      out->push_back(std::move(im));
    }
  };
  load_seq("images", "png", 3, &ds.images);
  load_seq("heldout", "png", 3, &ds.heldout_images);
  load_seq("depth", "pfm", 1, &ds.depth);
  load_seq("depth_heldout", "pfm", 1, &ds.heldout_depth);
  load_seq("flow_fwd", "pfm", 3, &ds.flow_fwd);
  load_seq("flow_bwd", "pfm", 3, &ds.flow_bwd);
  load_seq("masks_gt", "png", 1, &ds.masks_gt);
  load_seq("masks_heldout", "png", 1, &ds.heldout_masks);
  if (fs::exists(fs::path(dir) / "masks"))
    load_seq("masks", "png", 1, &ds.boot_masks);
  return ds;
}

void save_boot_masks(const std::vector<Image>& masks, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "masks");
  for (size_t i = 0; i < masks.size(); ++i)
    write_png((fs::path(dir) / "masks" / frame_name(static_cast<int>(i), "png"))
                  .string(),
              masks[i]);
}

}  // namespace dynkit

#include "dynkit/geometry.hpp"

namespace dynkit {

using diff::Shape;
using diff::Tensor;

Mat3 rot_x(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r.m = {1, 0, 0, 0, c, -s, 0, s, c};
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
  return r;
}

Mat3 rot_z(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
  return r;
}

Mat3 look_at(const Vec3& eye, const Vec3& target) {
  Vec3 fwd = (target - eye).normalized();
  Vec3 down{0, 1, 0};
  if (std::abs(fwd.dot(down)) > 0.999) down = {1, 0, 0};
  Vec3 right = down.cross(fwd).normalized();
  Vec3 ydir = fwd.cross(right);
  Mat3 r;
  r.m = {right.x, ydir.x, fwd.x,
         right.y, ydir.y, fwd.y,
         right.z, ydir.z, fwd.z};
  return r;
}

Ray ray_through_pixel(const Camera& cam, double u, double v) {
  Vec3 d_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  Ray r;
  r.origin = cam.t;
  r.dir = (cam.R * d_cam).normalized();
  return r;
}

Projection project_point(const Camera& cam, const Vec3& x_world) {
  Vec3 xc = cam.R.tmul(x_world - cam.t);
  Projection p;
  p.z = xc.z;
  p.in_front = xc.z > 1e-9;
  if (p.in_front) {
    p.u = cam.fx * xc.x / xc.z + cam.cx;
    p.v = cam.fy * xc.y / xc.z + cam.cy;
  }
  return p;
}

std::array<double, 6> pluecker(const Ray& r) {
  Vec3 m = r.origin.cross(r.dir);
  return {r.dir.x, r.dir.y, r.dir.z, m.x, m.y, m.z};
}

std::vector<double> posenc(const std::vector<double>& x, int freqs) {
  size_t d = x.size();
  std::vector<double> out;
  out.reserve(d * (1 + 2 * freqs));
  out.insert(out.end(), x.begin(), x.end());
  for (int k = 1; k <= freqs; ++k) {
    double w = k * M_PI;
    for (size_t i = 0; i < d; ++i) out.push_back(std::sin(w * x[i]));
    for (size_t i = 0; i < d; ++i) out.push_back(std::cos(w * x[i]));
  }
  return out;
}

Tensor posenc_t(const Tensor& x, int freqs) {
  std::vector<Tensor> parts;
  parts.push_back(x);
  for (int k = 1; k <= freqs; ++k) {
    Tensor scaled = diff::affine(x, k * M_PI, 0.0);
    parts.push_back(diff::sin(scaled));
    parts.push_back(diff::cos(scaled));
  }
  return diff::concat(parts, -1);
}

std::vector<double> stratified_samples(double near, double far, int count,
                                       bool jitter, Rng* rng) {
  if (count < 1) throw ConfigError("sample count must be positive");
  if (!(far > near)) throw ConfigError("far plane must exceed near plane");
  std::vector<double> out(count);
  double w = (far - near) / count;
  for (int i = 0; i < count; ++i) {
    double f = jitter ? rng->uniform() : 0.5;
    out[i] = near + w * (static_cast<double>(i) + f);
  }
  return out;
}

Tensor project_points(const Camera& cam, const Tensor& x_world,
                      std::vector<uint8_t>* valid_out, double z_eps) {
  if (x_world.ndim() != 2 || x_world.dim(1) != 3)
    throw ShapeError("project_points expects [B,3], got " +
                     diff::shape_str(x_world.shape()));
  // Row-vector transform: X_c^T = (X_w - t)^T R.
  Tensor t_row({1, 3}, {cam.t.x, cam.t.y, cam.t.z});
  Tensor r_mat({3, 3}, std::vector<double>(cam.R.m.begin(), cam.R.m.end()));
  Tensor xc = diff::matmul(diff::sub(x_world, t_row), r_mat);
  Tensor xy = diff::slice(xc, 1, 0, 2);
  Tensor z = diff::slice(xc, 1, 2, 1);
  if (valid_out) {
    int64_t b = x_world.dim(0);
    valid_out->assign(b, 0);
    for (int64_t i = 0; i < b; ++i)
      (*valid_out)[i] = z[i] > z_eps ? 1 : 0;
  }
  // Guard the divide so invalid rows stay finite; callers gate on the mask.
  Tensor zsafe = diff::clamp_min(z, z_eps);
  Tensor ndc = diff::div(xy, zsafe);
  Tensor focal({2}, {cam.fx, cam.fy});
  Tensor pp({2}, {cam.cx, cam.cy});
  return diff::add(diff::mul(ndc, focal), pp);
}

}  // namespace dynkit

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dynkit/ops.hpp"
#include "dynkit/rng.hpp"

namespace dynkit {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Vec3 tmul(const Vec3& v) const {  // transpose times v
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
};

Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

// World-from-camera rotation for a camera at eye looking at target, image
// x kept level (world +y is down). Falls back to +x as the level axis when
// the view direction is vertical.
Mat3 look_at(const Vec3& eye, const Vec3& target);

// Pinhole camera. Camera space: x right, y down, z forward. world_from_cam
// maps camera coordinates to world: X_w = R * X_c + t, so t is the camera
// center. Pixel (u,v) addresses the pixel center; u = fx * x/z + cx.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 R;  // world from camera
  Vec3 t;

  Vec3 center() const { return t; }
};

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length; ray(t) = origin + t * dir, t = distance
};

// Ray through pixel center (u,v); direction normalized to unit length.
Ray ray_through_pixel(const Camera& cam, double u, double v);

struct Projection {
  double u = 0, v = 0;
  double z = 0;  // camera-space depth
  bool in_front = false;
};

Projection project_point(const Camera& cam, const Vec3& x_world);

// Pluecker coordinates (d, o x d) of a ray with unit direction.
std::array<double, 6> pluecker(const Ray& r);

// Linear-frequency positional encoding: per component
// [x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ... sin(F pi x), ...].
// Output length d * (1 + 2F).
std::vector<double> posenc(const std::vector<double>& x, int freqs);
// Differentiable counterpart on the last axis: [..., d] -> [..., d(1+2F)].
diff::Tensor posenc_t(const diff::Tensor& x, int freqs);

// Midpoints of S equal bins on [near, far]; with jitter, positions are
// uniform within each bin.
std::vector<double> stratified_samples(double near, double far, int count,
                                       bool jitter, Rng* rng);

// Differentiable projection of world points [B,3] into a camera; returns
// pixel coordinates [B,2]. valid_out flags rows with z > z_eps (computed
// from primal values). Invalid rows still produce values; callers must
// gate on the mask.
diff::Tensor project_points(const Camera& cam, const diff::Tensor& x_world,
                            std::vector<uint8_t>* valid_out,
                            double z_eps = 1e-6);

}  // namespace dynkit
